#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "longscape/layers.hpp"

namespace longscape {

struct GeneratorConfig {
  int64_t input_size = 128;  // square input, output is input_size x 2*input_size
  std::array<int64_t, 5> channels{64, 128, 256, 512, 1024};
  std::array<int64_t, 3> enc_blocks{3, 4, 5};
  std::array<int64_t, 3> dec_blocks{2, 3, 4};
  std::array<int64_t, 3> grb_dilations{1, 2, 4};
  int64_t rct_reduced = 256;  // channel bottleneck ahead of the recurrence
  int64_t rct_pred_len = 4;

  int64_t latent_hw() const { return input_size / 32; }
  int64_t latent_ch() const { return channels[4]; }
  // Recurrent width: one flattened feature column.
  int64_t lstm_hidden() const { return rct_reduced * latent_hw(); }

  static GeneratorConfig at_scale(double s) {
    GeneratorConfig c;
    c.input_size = static_cast<int64_t>(std::lround(128.0 * s));
    for (auto& ch : c.channels) ch = static_cast<int64_t>(std::lround(ch * s));
    c.rct_reduced = static_cast<int64_t>(std::lround(256.0 * s));
    c.rct_pred_len = c.input_size / 32;
    c.validate();
    return c;
  }

  void validate() const {
    check(input_size >= 32 && input_size % 32 == 0, "generator input size must be a positive "
          "multiple of 32, got ", input_size);
    check(rct_pred_len >= 1, "rct_pred_len must be >= 1");
    for (auto ch : channels) check(ch >= 4 && ch % 4 == 0, "channel counts must be multiples of 4");
    check(channels[0] % 2 == 0, "first channel count must be even");
  }
};

template <typename T>
struct SkipSet {
  // Encoder features, outermost first: after the two stem convs and the first
  // two residual stages.
  std::array<Tensor<T>, 4> level;
  Tensor<T> rct_input;  // latent feeding the recurrence
};

// Residual block with a wide horizontal receptive field: 1x7 dilated conv then
// 3x1 vertical conv around an identity connection.
template <typename T>
struct GrbBlock {
  std::string name;
  int64_t ch = 0;
  int64_t rate = 1;

  InstanceNormLayer<T> n1() const { return {name + ".n1", ch}; }
  Conv2dLayer<T> horiz() const {
    return {name + ".ch", ch, ch, 1, 7, {1, 1}, {0, 3 * rate}, {1, rate}};
  }
  InstanceNormLayer<T> n2() const { return {name + ".n2", ch}; }
  Conv2dLayer<T> vert() const { return {name + ".cv", ch, ch, 3, 1, {1, 1}, {1, 0}}; }

  void init(ParamStore<T>& s, uint64_t seed) const {
    n1().init(s, seed);
    horiz().init(s, seed);
    n2().init(s, seed);
    vert().init(s, seed);
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& x) const {
    auto h = horiz()(p, leaky_relu(n1()(p, x), T(kLeakySlope)));
    h = vert()(p, leaky_relu(n2()(p, h), T(kLeakySlope)));
    return add(x, h);
  }
};

// Fuses a same-level encoder feature into the left (input-aligned) half of a
// decoder feature; the right half passes through untouched.
template <typename T>
struct ShcBlock {
  std::string name;
  int64_t ch = 0;

  int64_t mid() const { return ch / 2; }
  InstanceNormLayer<T> n1() const { return {name + ".n1", 2 * ch}; }
  Conv2dLayer<T> c1() const { return {name + ".c1", 2 * ch, mid(), 1, 1, {1, 1}, {0, 0}}; }
  InstanceNormLayer<T> n2() const { return {name + ".n2", mid()}; }
  Conv2dLayer<T> c2() const { return {name + ".c2", mid(), mid(), 3, 3, {1, 1}, {1, 1}}; }
  InstanceNormLayer<T> n3() const { return {name + ".n3", mid()}; }
  Conv2dLayer<T> c3() const { return {name + ".c3", mid(), ch, 1, 1, {1, 1}, {0, 0}}; }

  void init(ParamStore<T>& s, uint64_t seed) const {
    n1().init(s, seed);
    c1().init(s, seed);
    n2().init(s, seed);
    c2().init(s, seed);
    n3().init(s, seed);
    c3().init(s, seed);
  }

  Tensor<T> operator()(const TapedParams<T>& p, const Tensor<T>& dec,
                       const Tensor<T>& enc) const {
    check(dec.rank() == 4 && enc.rank() == 4, "shc ", name, ": BCHW features required");
    check(dec.dim(3) % 2 == 0, "shc ", name, ": decoder width must be even");
    const int64_t half = dec.dim(3) / 2;
    check(enc.dim(3) == half && enc.dim(2) == dec.dim(2) && enc.dim(1) == dec.dim(1) &&
              enc.dim(1) == ch,
          "shc ", name, ": encoder feature ", shape_str(enc.shape()),
          " does not match decoder ", shape_str(dec.shape()));
    auto left = slice(dec, 3, 0, half);
    auto h = concat<T>({left, enc}, 1);
    h = c1()(p, leaky_relu(n1()(p, h), T(kLeakySlope)));
    h = c2()(p, leaky_relu(n2()(p, h), T(kLeakySlope)));
    h = c3()(p, leaky_relu(n3()(p, h), T(kLeakySlope)));
    auto fused = add(h, enc);
    auto right = slice(dec, 3, half, dec.dim(3) - half);
    return concat<T>({fused, right}, 3);
  }
};

// Width-axis concatenation of the recurrence input to the left of its
// prediction; the first fusion level has no parameters.
template <typename T>
Tensor<T> shc_first(const Tensor<T>& rct_out, const Tensor<T>& rct_in) {
  check(rct_out.shape() == rct_in.shape(), "shc_first: shapes differ: ",
        shape_str(rct_out.shape()), " vs ", shape_str(rct_in.shape()));
  return concat<T>({rct_in, rct_out}, 3);
}

template <typename T>
class GeneratorNet {
 public:
  struct Stage {
    std::string label;
    Shape shape;
  };

  explicit GeneratorNet(GeneratorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const GeneratorConfig& config() const { return cfg_; }

  ParamStore<T> init_store(uint64_t seed) const {
    ParamStore<T> s;
    conv1().init(s, seed);
    norm1().init(s, seed);
    conv2().init(s, seed);
    for (int stage = 0; stage < 3; ++stage)
      for (const auto& b : enc_stage(stage)) b.init(s, seed);
    rct_reduce().init(s, seed);
    lstm1().init(s, seed);
    lstm2().init(s, seed);
    rct_expand().init(s, seed);
    for (int level = 0; level < 3; ++level) {
      grb(level).init(s, seed);
      for (const auto& b : dec_stage(level)) b.init(s, seed);
    }
    for (int level = 0; level < 4; ++level) shc(level).init(s, seed);
    for (int level = 0; level < 5; ++level) {
      pre_norm(level).init(s, seed);
      tconv(level).init(s, seed);
    }
    return s;
  }

  std::pair<Tensor<T>, SkipSet<T>> encode(const TapedParams<T>& p, const Tensor<T>& image,
                                          std::vector<Stage>* trace = nullptr) const {
    const int64_t size = cfg_.input_size;
    check(image.rank() == 4 && image.dim(1) == 3 && image.dim(2) == size && image.dim(3) == size,
          "encoder expects Bx3x", size, "x", size, " input, got ", shape_str(image.shape()));
    SkipSet<T> skips;
    auto x = conv1()(p, image);
    record(trace, "enc.conv1", x);
    skips.level[0] = x;
    x = conv2()(p, leaky_relu(norm1()(p, x), T(kLeakySlope)));
    record(trace, "enc.conv2", x);
    skips.level[1] = x;
    for (int stage = 0; stage < 3; ++stage) {
      for (const auto& b : enc_stage(stage)) x = b(p, x);
      record(trace, "enc.res" + std::to_string(stage + 1), x);
      if (stage < 2) skips.level[static_cast<size_t>(stage) + 2] = x;
    }
    skips.rct_input = x;
    return {x, skips};
  }

  // Column-recurrent content transfer: 1x1 reduce, split the latent into
  // width columns, run a 2-layer recurrence over them, then decode pred_len
  // further columns autoregressively and expand back to latent channels.
  Tensor<T> rct(const TapedParams<T>& p, const Tensor<T>& latent, int64_t pred_len) const {
    check(pred_len >= 1, "rct: pred_len must be >= 1");
    const int64_t lh = cfg_.latent_hw();
    check(latent.rank() == 4 && latent.dim(1) == cfg_.latent_ch() && latent.dim(2) == lh,
          "rct expects Bx", cfg_.latent_ch(), "x", lh, "xW latent, got ",
          shape_str(latent.shape()));
    const int64_t batch = latent.dim(0);
    const int64_t cols = latent.dim(3);
    const int64_t width = cfg_.lstm_hidden();

    auto reduced = rct_reduce()(p, latent);
    std::vector<Tensor<T>> seq;
    seq.reserve(static_cast<size_t>(cols));
    for (int64_t c = 0; c < cols; ++c)
      seq.push_back(reshape(slice(reduced, 3, c, 1), {batch, width}));

    auto l1 = lstm1();
    auto l2 = lstm2();
    auto st1 = lstm_zero_state<T>(batch, width);
    auto st2 = lstm_zero_state<T>(batch, width);
    Tensor<T> out;
    for (const auto& x : seq) {
      st1 = l1.step(p, x, st1);
      st2 = l2.step(p, st1.hidden, st2);
      out = st2.hidden;
    }
    std::vector<Tensor<T>> cols_out;
    cols_out.reserve(static_cast<size_t>(pred_len));
    for (int64_t k = 0; k < pred_len; ++k) {
      st1 = l1.step(p, out, st1);
      st2 = l2.step(p, st1.hidden, st2);
      out = st2.hidden;
      cols_out.push_back(reshape(out, {batch, cfg_.rct_reduced, lh, 1}));
    }
    auto stacked = pred_len == 1 ? cols_out[0] : concat<T>(cols_out, 3);
    return rct_expand()(p, stacked);
  }

  Tensor<T> forward(const TapedParams<T>& p, const Tensor<T>& image,
                    std::vector<Stage>* trace = nullptr) const {
    check(cfg_.rct_pred_len == cfg_.latent_hw(), "generator forward requires rct_pred_len == ",
          cfg_.latent_hw(), " so the prediction mirrors the input width");
    check(image.rank() == 4, "generator forward expects a BCHW batch");
    const auto expected = expected_stages(image.dim(0));
    size_t row = 0;
    auto stage_shape = [&](const std::string& label, const Shape& got) {
      check(row < expected.size(), "generator produced more stages than expected at '", label, "'");
      check(expected[row].label == label && expected[row].shape == got, "generator stage '", label,
            "' produced ", shape_str(got), ", expected '", expected[row].label, "' ",
            shape_str(expected[row].shape));
      if (trace) trace->push_back({label, got});
      ++row;
    };
    auto stage = [&](const std::string& label, const Tensor<T>& t) {
      stage_shape(label, t.shape());
    };

    std::vector<Stage> enc_trace;
    auto [latent, skips] = encode(p, image, &enc_trace);
    for (const auto& st : enc_trace) stage_shape(st.label, st.shape);
    auto r = rct(p, latent, cfg_.rct_pred_len);
    stage("rct", r);

    auto x = grb(0)(p, shc_first(r, skips.rct_input));
    stage("dec.shc1+grb1", x);
    for (const auto& b : dec_stage(0)) x = b(p, x);
    stage("dec.res1", x);

    for (int level = 0; level < 5; ++level) {
      x = tconv(level)(p, relu(pre_norm(level)(p, x)));
      stage("dec.tconv" + std::to_string(level + 1), x);
      if (level == 4) break;
      x = shc(level)(p, x, skips.level[static_cast<size_t>(3 - level)]);
      if (level < 2) {
        x = grb(level + 1)(p, x);
        stage("dec.shc" + std::to_string(level + 2) + "+grb" + std::to_string(level + 2), x);
        for (const auto& b : dec_stage(level + 1)) x = b(p, x);
        stage("dec.res" + std::to_string(level + 2), x);
      } else {
        stage("dec.shc" + std::to_string(level + 2), x);
      }
    }
    return tanh_op(x);
  }

  // Recursive panorama generation. Rightward steps feed the predicted half
  // back as the next input; leftward steps run on the horizontally flipped
  // leftmost panel and flip the prediction back.
  Tensor<T> generate_multistep(const ParamStore<T>& store, const Tensor<T>& image,
                               int64_t steps_right, int64_t steps_left) const {
    const int64_t size = cfg_.input_size;
    check(image.rank() == 3 && image.dim(0) == 3, "generate_multistep expects a 3xHxW image");
    check(image.dim(1) == size && image.dim(2) == size,
          "generate_multistep expects a square 3x", size, "x", size, " input, got ",
          shape_str(image.shape()));
    check(steps_right >= 0 && steps_left >= 0, "step counts must be >= 0");

    auto p = frozen_view(const_cast<ParamStore<T>&>(store));
    auto as_batch = [&](const Tensor<T>& t) { return reshape(t, {1, 3, size, size}); };
    auto predicted_half = [&](const Tensor<T>& panel) {
      auto out = forward(p, as_batch(panel));
      return reshape(slice(out, 3, size, size), {3, size, size});
    };

    std::vector<Tensor<T>> panels{image.detached()};
    Tensor<T> cur = image.detached();
    for (int64_t i = 0; i < steps_right; ++i) {
      cur = predicted_half(cur);
      panels.push_back(cur);
    }
    Tensor<T> curl = image.detached();
    for (int64_t i = 0; i < steps_left; ++i) {
      curl = flip(predicted_half(flip(curl, 2)), 2);
      panels.insert(panels.begin(), curl);
    }
    return panels.size() == 1 ? panels[0] : concat<T>(panels, 2);
  }

  // The row-by-row (kind, shape) contract of the default architecture for a
  // given batch size; forward() traces are checked against it in the tests.
  std::vector<Stage> expected_stages(int64_t batch) const {
    const int64_t s = cfg_.input_size;
    const auto& ch = cfg_.channels;
    std::vector<Stage> rows;
    rows.push_back({"enc.conv1", {batch, ch[0], s / 2, s / 2}});
    rows.push_back({"enc.conv2", {batch, ch[1], s / 4, s / 4}});
    rows.push_back({"enc.res1", {batch, ch[2], s / 8, s / 8}});
    rows.push_back({"enc.res2", {batch, ch[3], s / 16, s / 16}});
    rows.push_back({"enc.res3", {batch, ch[4], s / 32, s / 32}});
    rows.push_back({"rct", {batch, ch[4], s / 32, s / 32}});
    rows.push_back({"dec.shc1+grb1", {batch, ch[4], s / 32, s / 16}});
    rows.push_back({"dec.res1", {batch, ch[4], s / 32, s / 16}});
    rows.push_back({"dec.tconv1", {batch, ch[3], s / 16, s / 8}});
    rows.push_back({"dec.shc2+grb2", {batch, ch[3], s / 16, s / 8}});
    rows.push_back({"dec.res2", {batch, ch[3], s / 16, s / 8}});
    rows.push_back({"dec.tconv2", {batch, ch[2], s / 8, s / 4}});
    rows.push_back({"dec.shc3+grb3", {batch, ch[2], s / 8, s / 4}});
    rows.push_back({"dec.res3", {batch, ch[2], s / 8, s / 4}});
    rows.push_back({"dec.tconv3", {batch, ch[1], s / 4, s / 2}});
    rows.push_back({"dec.shc4", {batch, ch[1], s / 4, s / 2}});
    rows.push_back({"dec.tconv4", {batch, ch[0], s / 2, s}});
    rows.push_back({"dec.shc5", {batch, ch[0], s / 2, s}});
    rows.push_back({"dec.tconv5", {batch, 3, s, 2 * s}});
    return rows;
  }

  // Component accessors used by the tests.
  GrbBlock<T> grb(int level) const {
    return {"dec.grb" + std::to_string(level + 1), cfg_.channels[static_cast<size_t>(4 - level)],
            cfg_.grb_dilations[static_cast<size_t>(level)]};
  }
  ShcBlock<T> shc(int level) const {
    return {"dec.shc" + std::to_string(level + 2), cfg_.channels[static_cast<size_t>(3 - level)]};
  }

 private:
  GeneratorConfig cfg_;

  static void record(std::vector<Stage>* trace, std::string label, const Tensor<T>& t) {
    if (trace) trace->push_back({std::move(label), t.shape()});
  }

  Conv2dLayer<T> conv1() const {
    return {"enc.conv1", 3, cfg_.channels[0], 4, 4, {2, 2}, {1, 1}};
  }
  InstanceNormLayer<T> norm1() const { return {"enc.norm1", cfg_.channels[0]}; }
  Conv2dLayer<T> conv2() const {
    return {"enc.conv2", cfg_.channels[0], cfg_.channels[1], 4, 4, {2, 2}, {1, 1}};
  }

  std::vector<BottleneckBlock<T>> enc_stage(int stage) const {
    const int64_t in_ch = cfg_.channels[static_cast<size_t>(stage) + 1];
    const int64_t out_ch = cfg_.channels[static_cast<size_t>(stage) + 2];
    std::vector<BottleneckBlock<T>> blocks;
    for (int64_t i = 0; i < cfg_.enc_blocks[static_cast<size_t>(stage)]; ++i) {
      std::string nm = "enc.s" + std::to_string(stage + 3) + ".b" + std::to_string(i);
      blocks.push_back({nm, i == 0 ? in_ch : out_ch, out_ch, i == 0 ? 2 : 1});
    }
    return blocks;
  }

  std::vector<BottleneckBlock<T>> dec_stage(int level) const {
    const int64_t ch = cfg_.channels[static_cast<size_t>(4 - level)];
    std::vector<BottleneckBlock<T>> blocks;
    for (int64_t i = 0; i < cfg_.dec_blocks[static_cast<size_t>(level)]; ++i)
      blocks.push_back({"dec.r" + std::to_string(level + 1) + ".b" + std::to_string(i), ch, ch, 1});
    return blocks;
  }

  Conv2dLayer<T> rct_reduce() const {
    return {"rct.reduce", cfg_.latent_ch(), cfg_.rct_reduced, 1, 1, {1, 1}, {0, 0}};
  }
  Conv2dLayer<T> rct_expand() const {
    return {"rct.expand", cfg_.rct_reduced, cfg_.latent_ch(), 1, 1, {1, 1}, {0, 0}};
  }
  LstmLayer<T> lstm1() const { return {"rct.lstm1", cfg_.lstm_hidden(), cfg_.lstm_hidden()}; }
  LstmLayer<T> lstm2() const { return {"rct.lstm2", cfg_.lstm_hidden(), cfg_.lstm_hidden()}; }

  InstanceNormLayer<T> pre_norm(int level) const {
    return {"dec.pre" + std::to_string(level + 1), cfg_.channels[static_cast<size_t>(4 - level)]};
  }
  ConvTranspose2dLayer<T> tconv(int level) const {
    const int64_t in_ch = cfg_.channels[static_cast<size_t>(4 - level)];
    const int64_t out_ch = level == 4 ? 3 : cfg_.channels[static_cast<size_t>(3 - level)];
    return {"dec.tconv" + std::to_string(level + 1), in_ch, out_ch, 4, 4, {2, 2}, {1, 1}};
  }
};

}  // namespace longscape
