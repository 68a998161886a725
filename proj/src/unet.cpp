#include "dosepred/unet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dosepred/error.hpp"
#include "dosepred/rng.hpp"

namespace dosepred {

int NetConfig::width(int level) const {
  const int cap = 8 * base_width;
  int w = base_width;
  for (int l = 1; l < level && w < cap; ++l) w *= 2;
  return std::min(w, cap);
}

void NetConfig::validate() const {
  if (in_channels < 1) fail_validation("net config: in_channels must be >= 1");
  if (base_width < 1) fail_validation("net config: base_width must be >= 1");
  if (depth < 1) fail_validation("net config: depth must be >= 1");
  if (input_size < 2 || input_size % (1 << depth) != 0)
    fail_validation("net config: input_size " + std::to_string(input_size) +
                    " must be divisible by 2^depth = " + std::to_string(1 << depth));
  if (!(dropout >= 0.0 && dropout < 1.0)) fail_validation("net config: dropout must lie in [0, 1)");
  if (dropout_levels < 0) fail_validation("net config: dropout_levels must be >= 0");
  if (!(leaky_slope >= 0.0)) fail_validation("net config: negative leaky slope");
  if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0))
    fail_validation("net config: bad batch-norm settings");
  if (!(init_std > 0.0) || !(output_scale > 0.0))
    fail_validation("net config: init_std and output_scale must be positive");
}

nlohmann::ordered_json to_json(const NetConfig& c) {
  nlohmann::ordered_json j;
  j["in_channels"] = c.in_channels;
  j["base_width"] = c.base_width;
  j["depth"] = c.depth;
  j["input_size"] = c.input_size;
  j["dropout"] = c.dropout;
  j["dropout_levels"] = c.dropout_levels;
  j["leaky_slope"] = c.leaky_slope;
  j["bn_eps"] = c.bn_eps;
  j["bn_momentum"] = c.bn_momentum;
  j["init_std"] = c.init_std;
  j["output_scale"] = c.output_scale;
  return j;
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.base_width = j.value("base_width", c.base_width);
    c.depth = j.value("depth", c.depth);
    c.input_size = j.value("input_size", c.input_size);
    c.dropout = j.value("dropout", c.dropout);
    c.dropout_levels = j.value("dropout_levels", c.dropout_levels);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.bn_eps = j.value("bn_eps", c.bn_eps);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.init_std = j.value("init_std", c.init_std);
    c.output_scale = j.value("output_scale", c.output_scale);
  } catch (const nlohmann::json::exception& e) {
    fail_validation(std::string("net config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

template <typename T>
void add_into(Tensor<T>& dst, Tensor<T>&& src) {
  if (dst.data.empty()) {
    dst = std::move(src);
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename T>
typename UNet3D<T>::Conv UNet3D<T>::make_conv(const ConvShape& shape) {
  Conv c;
  c.shape = shape;
  c.w.assign(shape.weight_count(), T(0));
  c.b.assign(static_cast<std::size_t>(shape.out_ch), T(0));
  c.gw.assign(c.w.size(), T(0));
  c.gb.assign(c.b.size(), T(0));
  return c;
}

template <typename T>
typename UNet3D<T>::Norm UNet3D<T>::make_norm(int channels) {
  const auto n = static_cast<std::size_t>(channels);
  return Norm{std::vector<T>(n, T(1)), std::vector<T>(n, T(0)), std::vector<T>(n, T(0)),
              std::vector<T>(n, T(1)), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))};
}

template <typename T>
UNet3D<T>::UNet3D(const NetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  const int D = cfg_.depth;
  for (int l = 1; l <= D; ++l) {
    const int in = l == 1 ? cfg_.in_channels : cfg_.width(l - 1);
    EncoderLevel e{make_conv(down_conv(in, cfg_.width(l))), std::nullopt};
    if (l > 1) e.norm = make_norm(cfg_.width(l));
    enc_.push_back(std::move(e));
  }
  dec_.resize(static_cast<std::size_t>(D));
  for (int j = D - 1; j >= 1; --j) {
    const int in = j == D - 1 ? cfg_.width(D) : 2 * cfg_.width(j + 1);
    DecoderLevel& d = dec_[static_cast<std::size_t>(j)];
    d.conv = make_conv(same_conv(in, cfg_.width(j)));
    d.norm = make_norm(cfg_.width(j));
    d.dropout = cfg_.dropout > 0.0 && (D - 1 - j) < cfg_.dropout_levels;
  }
  final_ = make_conv(same_conv(D >= 2 ? 2 * cfg_.width(1) : cfg_.width(1), 1));

  Rng rng(derive_seed(init_seed, "init"));
  std::normal_distribution<double> normal(0.0, cfg_.init_std);
  for (auto& p : parameters()) {
    if (p.name.ends_with(".weight")) {
      for (T& v : p.value) v = static_cast<T>(normal(rng));
    }
  }
}

template <typename T>
std::vector<ParamRef<T>> UNet3D<T>::parameters() {
  std::vector<ParamRef<T>> out;
  const auto conv = [&](const std::string& name, Conv& c) {
    out.push_back({name + ".weight", c.w, c.gw});
    out.push_back({name + ".bias", c.b, c.gb});
  };
  const auto norm = [&](const std::string& name, Norm& n) {
    out.push_back({name + ".gamma", n.gamma, n.ggamma});
    out.push_back({name + ".beta", n.beta, n.gbeta});
  };
  for (int l = 1; l <= cfg_.depth; ++l) {
    EncoderLevel& e = enc_[static_cast<std::size_t>(l - 1)];
    conv("enc" + std::to_string(l) + ".conv", e.conv);
    if (e.norm) norm("enc" + std::to_string(l) + ".bn", *e.norm);
  }
  for (int j = cfg_.depth - 1; j >= 1; --j) {
    DecoderLevel& d = dec_[static_cast<std::size_t>(j)];
    conv("dec" + std::to_string(j) + ".conv", d.conv);
    norm("dec" + std::to_string(j) + ".bn", d.norm);
  }
  conv("out.conv", final_);
  return out;
}

template <typename T>
std::vector<std::span<T>> UNet3D<T>::buffers() {
  std::vector<std::span<T>> out;
  for (auto& e : enc_) {
    if (e.norm) {
      out.emplace_back(e.norm->mean);
      out.emplace_back(e.norm->var);
    }
  }
  for (int j = cfg_.depth - 1; j >= 1; --j) {
    DecoderLevel& d = dec_[static_cast<std::size_t>(j)];
    out.emplace_back(d.norm.mean);
    out.emplace_back(d.norm.var);
  }
  return out;
}

template <typename T>
std::size_t UNet3D<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& p : const_cast<UNet3D*>(this)->parameters()) n += p.value.size();
  return n;
}

template <typename T>
void UNet3D<T>::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
Tensor<T> UNet3D<T>::forward(const Tensor<T>& input, Mode mode, std::uint64_t dropout_seed) {
  const int S = cfg_.input_size;
  if (input.c != cfg_.in_channels || input.d != S || input.h != S || input.w != S) {
    fail_validation("unet: input " + std::to_string(input.c) + "x" + std::to_string(input.d) + "x" +
                    std::to_string(input.h) + "x" + std::to_string(input.w) + " does not match config " +
                    std::to_string(cfg_.in_channels) + "x" + std::to_string(S) + "^3");
  }
  const bool train = mode == Mode::train;
  const int D = cfg_.depth;
  const BatchNormSettings bns{cfg_.bn_eps, cfg_.bn_momentum};
  const T slope = static_cast<T>(cfg_.leaky_slope);

  tape_.reset();
  Tape tape;
  if (train) {
    tape.enc.resize(static_cast<std::size_t>(D));
    tape.dec.resize(static_cast<std::size_t>(D));
  }

  std::vector<Tensor<T>> outs(static_cast<std::size_t>(D + 1));
  const Tensor<T>* x = &input;
  for (int l = 1; l <= D; ++l) {
    EncoderLevel& e = enc_[static_cast<std::size_t>(l - 1)];
    Tensor<T> z = conv3d_forward<T>(*x, e.conv.w, e.conv.b, e.conv.shape);
    if (e.norm) {
      z = batchnorm_forward<T>(z, e.norm->gamma, e.norm->beta, e.norm->mean, e.norm->var, train, bns,
                               train ? &tape.enc[static_cast<std::size_t>(l - 1)].bn : nullptr);
    }
    if (train) {
      tape.enc[static_cast<std::size_t>(l - 1)].input = *x;
      tape.enc[static_cast<std::size_t>(l - 1)].pre = z;
    }
    leaky_relu_forward(z, slope);
    outs[static_cast<std::size_t>(l)] = std::move(z);
    x = &outs[static_cast<std::size_t>(l)];
  }

  Tensor<T> h = outs[static_cast<std::size_t>(D)];
  for (int j = D - 1; j >= 1; --j) {
    DecoderLevel& d = dec_[static_cast<std::size_t>(j)];
    DecoderTape* t = train ? &tape.dec[static_cast<std::size_t>(j)] : nullptr;
    if (t) {
      t->in_d = h.d;
      t->in_h = h.h;
      t->in_w = h.w;
    }
    Tensor<T> u = upsample2_forward(h);
    Tensor<T> z = conv3d_forward<T>(u, d.conv.w, d.conv.b, d.conv.shape);
    z = batchnorm_forward<T>(z, d.norm.gamma, d.norm.beta, d.norm.mean, d.norm.var, train, bns,
                             t ? &t->bn : nullptr);
    if (train && d.dropout) {
      t->mask = dropout_mask<T>(z.size(), cfg_.dropout,
                                derive_seed(dropout_seed, "dropout", static_cast<std::uint64_t>(j)));
      apply_mask(z, t->mask);
    }
    if (t) {
      t->upsampled = std::move(u);
      t->pre = z;
    }
    relu_forward(z);
    h = concat_forward(z, outs[static_cast<std::size_t>(j)]);
  }

  if (train) {
    tape.final_in_d = h.d;
    tape.final_in_h = h.h;
    tape.final_in_w = h.w;
  }
  Tensor<T> u = upsample2_forward(h);
  Tensor<T> z = conv3d_forward<T>(u, final_.w, final_.b, final_.shape);
  if (train) {
    tape.final_up = std::move(u);
    tape.final_pre = z;
    tape_ = std::move(tape);
  }
  relu_forward(z);
  const T scale = static_cast<T>(cfg_.output_scale);
  for (T& v : z.data) v *= scale;
  return z;
}

template <typename T>
void UNet3D<T>::backward(const Tensor<T>& grad_output) {
  if (!tape_) fail_validation("unet: backward called without a train-mode forward pass");
  Tape& tape = *tape_;
  if (!grad_output.same_shape(tape.final_pre)) fail_validation("unet: output gradient shape mismatch");
  const int D = cfg_.depth;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const T scale = static_cast<T>(cfg_.output_scale);

  Tensor<T> g = grad_output;
  for (T& v : g.data) v *= scale;
  relu_backward(g, tape.final_pre);
  Tensor<T> gu;
  conv3d_backward<T>(tape.final_up, final_.w, g, final_.shape, &gu, final_.gw, final_.gb);
  Tensor<T> gh = upsample2_backward(gu, tape.final_in_d, tape.final_in_h, tape.final_in_w);

  std::vector<Tensor<T>> genc(static_cast<std::size_t>(D + 1));
  for (int j = 1; j <= D - 1; ++j) {
    DecoderLevel& d = dec_[static_cast<std::size_t>(j)];
    DecoderTape& t = tape.dec[static_cast<std::size_t>(j)];
    auto [ga, gskip] = concat_backward(gh, cfg_.width(j));
    add_into(genc[static_cast<std::size_t>(j)], std::move(gskip));
    relu_backward(ga, t.pre);
    if (!t.mask.empty()) apply_mask(ga, t.mask);
    ga = batchnorm_backward<T>(ga, t.bn, d.norm.gamma, d.norm.ggamma, d.norm.gbeta);
    conv3d_backward<T>(t.upsampled, d.conv.w, ga, d.conv.shape, &gu, d.conv.gw, d.conv.gb);
    gh = upsample2_backward(gu, t.in_d, t.in_h, t.in_w);
  }
  add_into(genc[static_cast<std::size_t>(D)], std::move(gh));

  for (int l = D; l >= 1; --l) {
    EncoderLevel& e = enc_[static_cast<std::size_t>(l - 1)];
    EncoderTape& t = tape.enc[static_cast<std::size_t>(l - 1)];
    Tensor<T> ge = std::move(genc[static_cast<std::size_t>(l)]);
    leaky_relu_backward(ge, t.pre, slope);
    if (e.norm) ge = batchnorm_backward<T>(ge, t.bn, e.norm->gamma, e.norm->ggamma, e.norm->gbeta);
    Tensor<T> gx;
    conv3d_backward<T>(t.input, e.conv.w, ge, e.conv.shape, l > 1 ? &gx : nullptr, e.conv.gw,
                       e.conv.gb);
    if (l > 1) add_into(genc[static_cast<std::size_t>(l - 1)], std::move(gx));
  }
  tape_.reset();
}

template class UNet3D<float>;
template class UNet3D<double>;

}  // namespace dosepred
