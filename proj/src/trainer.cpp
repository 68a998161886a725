#include "dosepred/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dosepred/checkpoint.hpp"
#include "dosepred/error.hpp"
#include "dosepred/preprocess.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/score.hpp"

namespace dosepred {

std::string_view to_string(LossKind k) { return k == LossKind::mae ? "mae" : "mae_dvh"; }

std::string_view to_string(InputVariant v) {
  return v == InputVariant::ct_contours ? "ct_contours" : "ct_contours_beam";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "mae") return LossKind::mae;
  if (s == "mae_dvh") return LossKind::mae_dvh;
  fail_validation("unknown loss '" + std::string(s) + "' (expected mae or mae_dvh)");
}

InputVariant parse_input_variant(std::string_view s) {
  if (s == "ct_contours") return InputVariant::ct_contours;
  if (s == "ct_contours_beam") return InputVariant::ct_contours_beam;
  fail_validation("unknown input variant '" + std::string(s) +
                  "' (expected ct_contours or ct_contours_beam)");
}

int input_channels(InputVariant v) { return v == InputVariant::ct_contours ? 7 : 8; }

void TrainConfig::validate() const {
  if (epochs < 1) fail_validation("train config: epochs must be >= 1");
  if (constant_epochs < 1 || constant_epochs > epochs)
    fail_validation("train config: constant_epochs must lie in [1, epochs]");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail_validation("train config: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail_validation("train config: Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail_validation("train config: eps must be positive");
  if (!(dvh_weight >= 0.0) || !std::isfinite(dvh_weight))
    fail_validation("train config: dvh_weight must be >= 0");
  if (checkpoint_every < 0) fail_validation("train config: checkpoint_every must be >= 0");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["constant_epochs"] = c.constant_epochs;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["loss"] = to_string(c.loss);
  j["dvh_weight"] = c.dvh_weight;
  j["seed"] = c.seed;
  j["variant"] = to_string(c.variant);
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail_validation("train config: expected a JSON object");
  static const char* known[] = {"epochs", "constant_epochs", "lr",   "beta1",   "beta2",
                                "eps",    "loss",            "dvh_weight", "seed", "variant",
                                "checkpoint_every"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      fail_validation("train config: unknown key '" + it.key() + "'");
  }
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.constant_epochs = j.value("constant_epochs", c.constant_epochs);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    if (j.contains("loss")) c.loss = parse_loss_kind(j["loss"].get<std::string>());
    c.dvh_weight = j.value("dvh_weight", c.dvh_weight);
    c.seed = j.value("seed", c.seed);
    if (j.contains("variant")) c.variant = parse_input_variant(j["variant"].get<std::string>());
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    fail_validation(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    fail_validation("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                    std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.constant_epochs) return cfg.lr;
  return cfg.lr * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.constant_epochs);
}

Tensor<float> make_input(const CaseBundle& c, InputVariant variant) {
  const Index3 n = c.ct.dims();
  const int channels = input_channels(variant);
  Tensor<float> t(channels, n[2], n[1], n[0]);
  const auto put = [&](int ch, const Grid3& g) {
    auto dst = t.channel(ch);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] = static_cast<float>(g[i]);
  };
  put(0, clip_rescale_ct(c.ct));
  const auto order = default_channel_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (c.structures.contains(order[k])) {
      require_same_geometry(c.ct, c.structures.mask(order[k]), order[k]);
      put(static_cast<int>(k) + 1, c.structures.mask(order[k]));
    }
  }
  if (variant == InputVariant::ct_contours_beam) {
    if (!c.beam_channel)
      fail_validation("case " + c.meta.case_id +
                      ": input variant ct_contours_beam needs a beam channel (run beamdose)");
    require_same_geometry(c.ct, *c.beam_channel, "beam channel");
    put(channels - 1, *c.beam_channel);
  }
  return t;
}

Sample make_sample(const CaseBundle& c, InputVariant variant) {
  require_same_geometry(c.ct, c.reference_dose, "reference dose of case " + c.meta.case_id);
  return {c.meta.case_id, make_input(c, variant), c.reference_dose, c.structures};
}

void validate_dataset(const std::vector<Sample>& samples) {
  if (samples.empty()) fail_validation("dataset is empty");
  const Geometry& g = samples.front().target.geometry();
  if (g.dims[0] != g.dims[1] || g.dims[1] != g.dims[2])
    fail_validation("dataset geometry must be cubic, got " + describe(g));
  // Per-case crops give each case its own origin (and possibly spacing); only the
  // voxel grid has to agree.
  for (const auto& s : samples) {
    if (s.target.geometry().dims != g.dims)
      fail_validation("case " + s.case_id + " grid " + describe(s.target.geometry()) +
                      " has different dims than " + describe(g));
    if (s.input.c != samples.front().input.c)
      fail_validation("case " + s.case_id + " has a different channel count");
  }
}

Grid3 predict(UNet3D<float>& net, const Tensor<float>& input, const Geometry& geometry) {
  const Tensor<float> out = net.forward(input, Mode::eval);
  Grid3 g(geometry);
  if (g.size() != out.size()) fail_validation("predict: output size does not match geometry");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = out.data[i];
  g.require_finite("prediction");
  return g;
}

namespace {

DvhConfig dvh_config_for(const Sample& s) {
  DvhConfig cfg = DvhConfig::standard();
  std::vector<std::string> present;
  for (const auto& name : cfg.structures) {
    if (s.structures.contains(name) && count_inside(s.structures.mask(name)) > 0)
      present.push_back(name);
  }
  cfg.structures = std::move(present);
  return cfg;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng() % (i + 1);
    std::swap(order[i], order[j]);
  }
  return order;
}

std::vector<StepLog> read_loss_csv(const std::filesystem::path& file, int before_epoch) {
  std::vector<StepLog> rows;
  std::ifstream in(file);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    StepLog r;
    std::string f;
    std::getline(ls, f, ',');
    r.epoch = std::stoi(f);
    std::getline(ls, r.case_id, ',');
    std::getline(ls, f, ',');
    r.mae = std::stod(f);
    std::getline(ls, f, ',');
    r.dvh = std::stod(f);
    std::getline(ls, f, ',');
    r.total = std::stod(f);
    std::getline(ls, f, ',');
    r.lr = std::stod(f);
    if (r.epoch < before_epoch) rows.push_back(r);
  }
  return rows;
}

nlohmann::ordered_json checkpoint_extra(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["seeds"] = {{"master", cfg.seed},
                {"init", derive_seed(cfg.seed, "init")}};
  j["train"] = to_json(cfg);
  return j;
}

}  // namespace

Objective evaluate_objective(const Grid3& pred, const Sample& s, const TrainConfig& cfg,
                             const DvhConfig& dvh_cfg) {
  Objective o;
  o.mae = mae_loss(pred, s.target);
  o.grad = mae_grad(pred, s.target);
  o.total = o.mae;
  if (cfg.loss == LossKind::mae_dvh) {
    LossAndGrad d = dvh_loss_and_grad(pred, s.target, s.structures, dvh_cfg);
    o.dvh = d.loss;
    o.total = o.mae + cfg.dvh_weight * d.loss;
    auto g = o.grad.values();
    const auto dg = d.grad.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.dvh_weight * dg[i];
  }
  return o;
}

void write_loss_csv(const std::filesystem::path& file, const std::vector<StepLog>& log) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail_io("cannot open " + file.string() + " for writing");
  out.precision(17);
  out << "epoch,case,mae,dvh,total,lr\n";
  for (const auto& r : log)
    out << r.epoch << ',' << r.case_id << ',' << r.mae << ',' << r.dvh << ',' << r.total << ','
        << r.lr << '\n';
  if (!out) fail_io("write failed: " + file.string());
}

TrainResult train(const std::vector<Sample>& data, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  net_cfg.validate();
  validate_dataset(data);
  const Geometry geometry = data.front().target.geometry();
  if (data.front().input.c != net_cfg.in_channels)
    fail_validation("dataset has " + std::to_string(data.front().input.c) +
                    " input channels, network expects " + std::to_string(net_cfg.in_channels));
  if (geometry.dims[0] != net_cfg.input_size)
    fail_validation("dataset extent " + std::to_string(geometry.dims[0]) +
                    " does not match network input_size " + std::to_string(net_cfg.input_size));
  if (opts.validation) {
    for (const auto& s : *opts.validation) {
      if (s.target.geometry().dims != geometry.dims || s.input.c != net_cfg.in_channels)
        fail_validation("validation case " + s.case_id + " does not match the training data");
    }
  }

  TrainResult r{UNet3D<float>(net_cfg, derive_seed(cfg.seed, "init")), {}, 0, {}, {}};
  r.adam = AdamState<float>::zeros_like(r.net.parameters());
  if (!opts.resume.empty()) {
    const Checkpoint ck = load_checkpoint(opts.resume);
    if (ck.header.contains("train")) {
      const TrainConfig saved = train_config_from_json(ck.header["train"]);
      if (!(saved == cfg))
        fail_validation("checkpoint " + opts.resume.string() +
                        " was written with a different training config");
    }
    restore_model(ck, r.net);
    r.adam = restore_adam(ck, r.net);
    r.epochs_done = ck.epoch;
    if (r.epochs_done > cfg.epochs)
      fail_validation("checkpoint epoch " + std::to_string(r.epochs_done) + " exceeds config");
  }
  if (!opts.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) fail_io("cannot create " + opts.out_dir.string() + ": " + ec.message());
    if (!opts.resume.empty()) r.log = read_loss_csv(opts.out_dir / "loss.csv", r.epochs_done);
  }

  std::vector<DvhConfig> dvh_cfgs;
  for (const auto& s : data) dvh_cfgs.push_back(dvh_config_for(s));
  const AdamSettings adam = cfg.adam();
  const int last = opts.stop_after >= 0 ? std::min(opts.stop_after, cfg.epochs) : cfg.epochs;

  for (int epoch = r.epochs_done; epoch < last; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Sample& s = data[order[step]];
      const std::uint64_t dropout_seed = derive_seed(
          cfg.seed, "dropout", static_cast<std::uint64_t>(epoch) * data.size() + step);
      r.net.zero_grad();
      const Tensor<float> out = r.net.forward(s.input, Mode::train, dropout_seed);
      Grid3 pred(s.target.geometry());
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = out.data[i];
      Objective o = evaluate_objective(pred, s, cfg, dvh_cfgs[order[step]]);
      if (!std::isfinite(o.total))
        fail_numeric("non-finite loss at epoch " + std::to_string(epoch) + ", case " + s.case_id);
      Tensor<float> g(1, out.d, out.h, out.w);
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<float>(o.grad[i]);
      r.net.backward(g);
      adam_step(r.net.parameters(), r.adam, lr, adam);
      r.log.push_back({epoch, s.case_id, o.mae, o.dvh, o.total, lr});
      summary.mean_mae += o.mae / static_cast<double>(order.size());
      summary.mean_total += o.total / static_cast<double>(order.size());
    }
    r.epochs_done = epoch + 1;

    if (opts.validation && !opts.validation->empty()) {
      double ds = 0.0, dv = 0.0;
      for (const auto& s : *opts.validation) {
        const Grid3 pred = predict(r.net, s.input, s.target.geometry());
        ds += dose_score(pred, s.target);
        dv += dvh_score(pred, s.target, s.structures);
      }
      summary.val_dose_score = ds / static_cast<double>(opts.validation->size());
      summary.val_dvh_score = dv / static_cast<double>(opts.validation->size());
    }
    r.epochs.push_back(summary);
    if (opts.on_epoch) opts.on_epoch(summary);

    if (!opts.out_dir.empty()) {
      write_loss_csv(opts.out_dir / "loss.csv", r.log);
      if (cfg.checkpoint_every > 0 && r.epochs_done % cfg.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_e%04d.ckpt", r.epochs_done);
        save_checkpoint(opts.out_dir / name, r.net, r.epochs_done, &r.adam, checkpoint_extra(cfg));
      }
    }
  }
  if (!opts.out_dir.empty())
    save_checkpoint(opts.out_dir / "model.ckpt", r.net, r.epochs_done, &r.adam,
                    checkpoint_extra(cfg));
  return r;
}

}  // namespace dosepred
