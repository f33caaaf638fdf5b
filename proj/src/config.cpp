#include "longscape/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace longscape {

namespace {

struct KeyDesc {
  const char* name;
  const char* desc;
  enum Kind { kDouble, kInt } kind;
  double RunConfig::* dfield;
  int64_t RunConfig::* ifield;
  // model keys define the architecture/schedule and are fingerprinted;
  // run-control keys (seed, step budgets, output cadence) are not.
  bool model = true;
};

const std::vector<KeyDesc>& keys() {
  static const std::vector<KeyDesc> table = {
      {"lr", "base learning rate", KeyDesc::kDouble, &RunConfig::lr, nullptr},
      {"adam_beta1", "Adam first-moment decay", KeyDesc::kDouble, &RunConfig::adam_beta1, nullptr},
      {"adam_beta2", "Adam second-moment decay", KeyDesc::kDouble, &RunConfig::adam_beta2,
       nullptr},
      {"adam_eps", "Adam denominator epsilon", KeyDesc::kDouble, &RunConfig::adam_eps, nullptr},
      {"lambda_rec", "reconstruction loss weight", KeyDesc::kDouble, &RunConfig::lambda_rec,
       nullptr},
      {"lambda_adv", "adversarial loss weight", KeyDesc::kDouble, &RunConfig::lambda_adv,
       nullptr},
      {"lambda_gp", "gradient penalty weight", KeyDesc::kDouble, &RunConfig::lambda_gp, nullptr},
      {"beta", "global/local critic mix", KeyDesc::kDouble, &RunConfig::beta, nullptr},
      {"scale", "model scale factor (1 = 128px inputs; 0.5/0.25 shrink size and channels)",
       KeyDesc::kDouble, &RunConfig::scale, nullptr},
      {"batch_size", "images per training step", KeyDesc::kInt, nullptr, &RunConfig::batch_size},
      {"epochs", "total training epochs", KeyDesc::kInt, nullptr, &RunConfig::epochs},
      {"lr_drop_epoch", "epoch after which lr is divided by 10", KeyDesc::kInt, nullptr,
       &RunConfig::lr_drop_epoch},
      {"warmup_iters", "generator-only reconstruction iterations before adversarial training",
       KeyDesc::kInt, nullptr, &RunConfig::warmup_iters},
      {"ncir_high", "critic updates per generator update early / on period hits", KeyDesc::kInt,
       nullptr, &RunConfig::ncir_high},
      {"ncir_low", "critic updates per generator update otherwise", KeyDesc::kInt, nullptr,
       &RunConfig::ncir_low},
      {"ncir_cutoff", "iterations below this always use ncir_high", KeyDesc::kInt, nullptr,
       &RunConfig::ncir_cutoff},
      {"ncir_period", "every multiple of this uses ncir_high", KeyDesc::kInt, nullptr,
       &RunConfig::ncir_period},
      {"seed", "master seed for init, shuffling, augmentation and penalties", KeyDesc::kInt,
       nullptr, &RunConfig::seed, false},
      {"checkpoint_every", "steps between periodic checkpoints (0 = only at the end)",
       KeyDesc::kInt, nullptr, &RunConfig::checkpoint_every, false},
      {"max_steps", "stop after this many train steps (0 = full schedule)", KeyDesc::kInt,
       nullptr, &RunConfig::max_steps, false},
      {"sample_images", "validation images rendered into the per-epoch sample grid",
       KeyDesc::kInt, nullptr, &RunConfig::sample_images, false},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (key != k.name) continue;
    try {
      size_t used = 0;
      if (k.kind == KeyDesc::kDouble) {
        this->*(k.dfield) = std::stod(value, &used);
      } else {
        this->*(k.ifield) = std::stoll(value, &used);
      }
      check(trim(value.substr(used)).empty(), "trailing characters");
    } catch (const std::exception&) {
      fail("config: cannot parse value '", value, "' for key '", key, "'");
    }
    return;
  }
  fail("config: unknown key '", key, "'");
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "config: cannot open '", path, "'");
  std::stringstream ss;
  ss << f.rdbuf();
  *this = parse_config_text(ss.str(), *this);
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, "config line ", lineno, ": expected 'key = value', got '",
          line, "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check(!key.empty() && !value.empty(), "config line ", lineno, ": empty key or value");
    base.set(key, value);
  }
  return base;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  char buf[64];
  for (const auto& k : keys()) {
    if (k.kind == KeyDesc::kDouble) {
      std::snprintf(buf, sizeof(buf), "%.17g", this->*(k.dfield));
      os << k.name << " = " << buf << "\n";
    } else {
      os << k.name << " = " << this->*(k.ifield) << "\n";
    }
  }
  return os.str();
}

std::string RunConfig::help_table() {
  RunConfig d;
  std::ostringstream os;
  os << "Config keys (key = value lines, # comments; flags override):\n";
  char buf[64];
  for (const auto& k : keys()) {
    std::string def;
    if (k.kind == KeyDesc::kDouble) {
      std::snprintf(buf, sizeof(buf), "%g", d.*(k.dfield));
      def = buf;
    } else {
      def = std::to_string(d.*(k.ifield));
    }
    char line[256];
    std::snprintf(line, sizeof(line), "  %-18s default %-12s %s\n", k.name, def.c_str(), k.desc);
    os << line;
  }
  return os.str();
}

uint64_t RunConfig::fingerprint() const {
  std::ostringstream os;
  char buf[64];
  for (const auto& k : keys()) {
    if (!k.model) continue;
    if (k.kind == KeyDesc::kDouble) {
      std::snprintf(buf, sizeof(buf), "%.17g", this->*(k.dfield));
      os << k.name << " = " << buf << "\n";
    } else {
      os << k.name << " = " << this->*(k.ifield) << "\n";
    }
  }
  return fnv1a64(os.str());
}

GeneratorConfig RunConfig::generator_config() const { return GeneratorConfig::at_scale(scale); }

TrainSchedule RunConfig::schedule() const {
  TrainSchedule s;
  s.base_lr = lr;
  s.adam_beta1 = adam_beta1;
  s.adam_beta2 = adam_beta2;
  s.adam_eps = adam_eps;
  s.batch_size = batch_size;
  s.warmup_iters = warmup_iters;
  s.epochs = epochs;
  s.lr_drop_epoch = lr_drop_epoch;
  s.ncir_high = ncir_high;
  s.ncir_low = ncir_low;
  s.ncir_cutoff = ncir_cutoff;
  s.ncir_period = ncir_period;
  return s;
}

LossWeights RunConfig::weights() const {
  LossWeights w;
  w.lambda_rec = lambda_rec;
  w.lambda_adv = lambda_adv;
  w.lambda_gp = lambda_gp;
  w.beta = beta;
  return w;
}

void RunConfig::validate() const {
  schedule().validate();
  weights().validate();
  generator_config().validate();
  check(seed >= 0, "config: seed must be >= 0");
  check(max_steps >= 0 && checkpoint_every >= 0 && sample_images >= 0,
        "config: counters must be >= 0");
}

}  // namespace longscape
