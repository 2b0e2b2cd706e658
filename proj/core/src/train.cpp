// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "rba/checkpoint.hpp"

namespace rba {

using nlohmann::json;

namespace {

constexpr std::uint64_t kLrFindStream = 0x4c52;  // "LR"
constexpr std::uint64_t kTrainStream = 0x5452;   // "TR"

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  check(ec == std::errc() && ptr == s.data() + s.size(),
        "checkpoint: bad unsigned integer '", s, "'");
  return v;
}

Tensor assemble_batch(const DataSet& data,
                      std::span<const std::int64_t> indices, bool augment,
                      const AugmentConfig& acfg, Rng& rng) {
  const auto grid = data.grid();
  const auto n = std::int64_t(indices.size());
  auto batch = Tensor::zeros({n, 1, grid[0], grid[1], grid[2]});
  auto dst = batch.mutable_data();
  const std::int64_t vol = grid[0] * grid[1] * grid[2];
  for (std::int64_t row = 0; row < n; ++row) {
    const auto& sample = data.volumes[std::size_t(indices[std::size_t(row)])];
    Tensor prepared =
        augment ? augment_random_crop(sample, acfg, rng) : sample;
    std::memcpy(dst.data() + row * vol, prepared.data().data(),
                std::size_t(vol) * sizeof(float));
  }
  return batch;
}

Tensor ages_of(const DataSet& data, std::span<const std::int64_t> indices) {
  std::vector<float> ages(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    ages[i] = float(data.ages[std::size_t(indices[i])]);
  return Tensor::from_data({std::int64_t(indices.size())}, std::move(ages));
}

/// Bit-exact capture/restore of everything lr_find may touch; restores on
/// scope exit, including exceptional paths.
class StateRestorer {
 public:
  explicit StateRestorer(ModelState& state) : state_(state) {
    for (auto& [name, t] : state.params) {
      values_[name].assign(t.data().begin(), t.data().end());
      flags_[name] = t.requires_grad();
    }
    for (auto& [name, s] : state.bn) {
      bn_mean_[name].assign(s.mean.data().begin(), s.mean.data().end());
      bn_var_[name].assign(s.var.data().begin(), s.var.data().end());
      bn_batches_[name] = s.batches;
    }
    mode_ = state.mode;
  }

  ~StateRestorer() {
    for (auto& [name, t] : state_.params) {
      auto dst = t.mutable_data();
      const auto& src = values_.at(name);
      std::copy(src.begin(), src.end(), dst.begin());
      t.set_requires_grad(flags_.at(name));
      t.clear_grad();
    }
    for (auto& [name, s] : state_.bn) {
      auto m = s.mean.mutable_data();
      auto v = s.var.mutable_data();
      const auto& ms = bn_mean_.at(name);
      const auto& vs = bn_var_.at(name);
      std::copy(ms.begin(), ms.end(), m.begin());
      std::copy(vs.begin(), vs.end(), v.begin());
      s.batches = bn_batches_.at(name);
    }
    state_.mode = mode_;
  }

 private:
  ModelState& state_;
  std::map<std::string, std::vector<float>> values_, bn_mean_, bn_var_;
  std::map<std::string, bool> flags_;
  std::map<std::string, std::int64_t> bn_batches_;
  Mode mode_;
};

}  // namespace

// --- dataset -------------------------------------------------------------------

DataSet DataSet::load(const Manifest& manifest) {
  check(!manifest.subjects.empty(), "dataset: manifest is empty");
  DataSet ds;
  ds.volumes.reserve(manifest.subjects.size());
  for (const auto& s : manifest.subjects) {
    auto [tensor, meta] = load_tensor(s.path);
    check(tensor.rank() == 5 && tensor.extent(0) == 1 && tensor.extent(1) == 1,
          "dataset: '", s.path, "' is not a (1,1,D,H,W) tensor, got ",
          shape_str(tensor.shape()));
    if (!ds.volumes.empty())
      check(tensor.shape() == ds.volumes.front().shape(), "dataset: '", s.path,
            "' grid ", shape_str(tensor.shape()),
            " differs from the first subject's ",
            shape_str(ds.volumes.front().shape()));
    ds.volumes.push_back(std::move(tensor));
    ds.ages.push_back(s.age_years);
    ds.ids.push_back(s.id);
    ds.sexes.push_back(s.sex);
  }
  return ds;
}

DataSet DataSet::subset(const std::vector<std::int64_t>& indices) const {
  DataSet out;
  for (auto i : indices) {
    check(i >= 0 && i < size(), "dataset: subset index ", i, " out of range");
    out.volumes.push_back(volumes[std::size_t(i)]);
    out.ages.push_back(ages[std::size_t(i)]);
    out.ids.push_back(ids[std::size_t(i)]);
    out.sexes.push_back(sexes[std::size_t(i)]);
  }
  return out;
}

std::array<std::int64_t, 3> DataSet::grid() const {
  check(!volumes.empty(), "dataset: empty");
  const auto& s = volumes.front().shape();
  return {s[2], s[3], s[4]};
}

// --- learning-rate finder --------------------------------------------------------

LrFindResult lr_find(const ModelSpec& spec, ModelState& state,
                     const DataSet& data, const TrainConfig& cfg,
                     double lr_start, double lr_end, std::int64_t num_steps) {
  cfg.validate();
  check(lr_start > 0 && lr_start < lr_end,
        "lr_find: need 0 < lr_start < lr_end");
  check(num_steps >= 2, "lr_find: need at least 2 steps");
  check(data.size() >= 2, "lr_find: need at least 2 subjects");

  StateRestorer keep(state);  // mock training leaves no trace
  state.mode = Mode::train;
  state.set_requires_grad(true);

  Rng rng = Rng::child(cfg.seed, kLrFindStream);
  std::vector<std::int64_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t pos = 0;
  const auto batch_n = std::size_t(std::min(cfg.batch_size, data.size()));

  OptimizerState opt;
  LrFindResult res;
  const double ratio = lr_end / lr_start;
  double ema = 0;
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_i = -1;

  for (std::int64_t i = 0; i < num_steps; ++i) {
    const double lr =
        lr_start * std::pow(ratio, double(i) / double(num_steps - 1));
    if (pos + batch_n > order.size()) {
      rng.shuffle(order);
      pos = 0;
    }
    std::span<const std::int64_t> idx(order.data() + pos, batch_n);
    pos += batch_n;

    auto batch = assemble_batch(data, idx, cfg.augment, cfg.augment_cfg, rng);
    auto target = ages_of(data, idx);
    Tape tape;
    auto pred = forward<float>(spec, state, batch, &tape, &rng);
    auto loss = mse_loss<float>(&tape, pred, target);
    const double loss_v = double(loss.item());
    if (!std::isfinite(loss_v)) {
      check(i > 0, "lr_find: loss diverged at the very first step; "
                   "lower lr_start (was ", lr_start, ")");
      break;
    }
    res.lrs.push_back(lr);
    res.raw_losses.push_back(loss_v);
    ema = 0.98 * ema + 0.02 * loss_v;
    const double smoothed = ema / (1.0 - std::pow(0.98, double(i + 1)));
    res.smoothed_losses.push_back(smoothed);
    if (smoothed < best) {
      best = smoothed;
      best_i = i;
    }
    if (smoothed > 4.0 * best) break;

    tape.backward(loss);
    adamw_step(state.params, opt, lr, cfg.momentum_max, cfg.beta2, cfg.epsilon,
               cfg.weight_decay);
    for (auto& [name, p] : state.params) p.clear_grad();
  }

  res.steps_run = std::int64_t(res.lrs.size());
  check(best_i >= 0, "lr_find: no finite loss recorded");
  res.eta_max = res.lrs[std::size_t(best_i)] / 10.0;
  return res;
}

// --- training loop ----------------------------------------------------------------

Checkpoint train(const ModelSpec& spec, ModelState initial_state,
                 const DataSet& data, const TrainConfig& cfg) {
  cfg.validate();
  check(data.size() >= 1, "train: dataset is empty");

  // deep copy: training must not write through the caller's tensors
  ModelState state = initial_state.clone();
  state.mode = Mode::train;
  state.set_requires_grad(true);

  TrainConfig resolved = cfg;
  TrainLog log;
  if (cfg.epochs > 0 && !cfg.eta_max) {
    log.lr_find = lr_find(spec, state, data, cfg, cfg.lr_find_start,
                          cfg.lr_find_end, cfg.lr_find_steps);
    log.lr_find_ran = true;
    resolved.eta_max = log.lr_find.eta_max;
  }
  if (resolved.eta_max) log.eta_max = *resolved.eta_max;

  const std::int64_t n = data.size();
  const std::int64_t full_batches = n / cfg.batch_size;
  const std::int64_t remainder = n % cfg.batch_size;
  const std::int64_t batches_per_epoch = full_batches + (remainder >= 2 ? 1 : 0);
  if (remainder == 1) log.dropped_singleton_batches = cfg.epochs;
  check(batches_per_epoch >= 1 || cfg.epochs == 0, "train: ", n,
        " subjects yield no batch of at least 2 at batch_size ",
        cfg.batch_size);

  OptimizerState opt;
  Rng rng = Rng::child(cfg.seed, kTrainStream);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  const std::int64_t total_steps = cfg.epochs * batches_per_epoch;
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    EpochLog elog;
    double weighted = 0;
    std::int64_t counted = 0;
    for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
      const std::int64_t begin = b * cfg.batch_size;
      const std::int64_t size = std::min(cfg.batch_size, n - begin);
      std::span<const std::int64_t> idx(order.data() + begin,
                                        std::size_t(size));

      auto batch = assemble_batch(data, idx, cfg.augment, cfg.augment_cfg, rng);
      auto target = ages_of(data, idx);
      Tape tape;
      auto pred = forward<float>(spec, state, batch, &tape, &rng);
      auto loss = mse_loss<float>(&tape, pred, target);
      const double loss_v = double(loss.item());
      if (!std::isfinite(loss_v)) {
        std::string ids;
        for (auto i : idx) ids += data.ids[std::size_t(i)] + " ";
        fail("train: non-finite loss at epoch ", epoch, ", step ", step,
             "; batch subjects: ", ids);
      }
      tape.backward(loss);
      const SchedulePoint sp = one_cycle(step, total_steps, resolved);
      adamw_step(state.params, opt, sp.lr, sp.momentum, cfg.beta2, cfg.epsilon,
                 cfg.weight_decay);
      for (auto& [name, p] : state.params) p.clear_grad();

      elog.batches.emplace_back(loss_v, size);
      weighted += loss_v * double(size);
      counted += size;
      ++step;
    }
    elog.mean_loss = weighted / double(counted);
    log.epochs.push_back(std::move(elog));
  }

  Checkpoint ck;
  ck.spec = spec;
  ck.state = std::move(state);
  ck.opt = std::move(opt);
  ck.config = resolved;
  ck.log = std::move(log);
  ck.rng_state = rng.state();
  return ck;
}

Checkpoint fine_tune(const Checkpoint& checkpoint, const DataSet& data,
                     const TrainConfig& cfg) {
  // same routine, new data: weights continue, optimizer is fresh, and the
  // learning-rate sweep reruns unless cfg pins eta_max
  ModelState state = checkpoint.state;
  return train(checkpoint.spec, std::move(state), data, cfg);
}

std::vector<double> predict(const ModelSpec& spec, ModelState& state,
                            const DataSet& data, std::int64_t batch_size) {
  check(batch_size >= 1, "predict: batch_size must be positive");
  const Mode saved = state.mode;
  state.mode = Mode::eval;
  Rng unused(0);  // augmentation is off in eval
  std::vector<double> out;
  out.reserve(std::size_t(data.size()));
  for (std::int64_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::int64_t size = std::min(batch_size, data.size() - begin);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(size));
    std::iota(idx.begin(), idx.end(), begin);
    auto batch = assemble_batch(data, idx, false, {}, unused);
    auto pred = forward<float>(spec, state, batch, nullptr);
    for (auto v : pred.data()) out.push_back(double(v));
  }
  state.mode = saved;
  return out;
}

// --- config JSON -----------------------------------------------------------------

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["eta_max"] = cfg.eta_max ? json(*cfg.eta_max) : json(nullptr);
  j["momentum_min"] = cfg.momentum_min;
  j["momentum_max"] = cfg.momentum_max;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = std::to_string(cfg.seed);
  j["pct_start"] = cfg.pct_start;
  j["div_factor"] = cfg.div_factor;
  j["final_div"] = cfg.final_div;
  j["lr_find_start"] = cfg.lr_find_start;
  j["lr_find_end"] = cfg.lr_find_end;
  j["lr_find_steps"] = cfg.lr_find_steps;
  j["augment"] = cfg.augment;
  j["augment_min_fraction"] = cfg.augment_cfg.min_fraction;
  j["augment_max_fraction"] = cfg.augment_cfg.max_fraction;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json_text) {
  auto j = json::parse(json_text, nullptr, false);
  check(!j.is_discarded(), "config: not valid JSON");
  TrainConfig cfg;
  if (j.contains("eta_max") && !j["eta_max"].is_null())
    cfg.eta_max = j["eta_max"].get<double>();
  cfg.momentum_min = j.value("momentum_min", cfg.momentum_min);
  cfg.momentum_max = j.value("momentum_max", cfg.momentum_max);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  if (j.contains("seed")) cfg.seed = parse_u64(j["seed"].get<std::string>());
  cfg.pct_start = j.value("pct_start", cfg.pct_start);
  cfg.div_factor = j.value("div_factor", cfg.div_factor);
  cfg.final_div = j.value("final_div", cfg.final_div);
  cfg.lr_find_start = j.value("lr_find_start", cfg.lr_find_start);
  cfg.lr_find_end = j.value("lr_find_end", cfg.lr_find_end);
  cfg.lr_find_steps = j.value("lr_find_steps", cfg.lr_find_steps);
  cfg.augment = j.value("augment", cfg.augment);
  cfg.augment_cfg.min_fraction =
      j.value("augment_min_fraction", cfg.augment_cfg.min_fraction);
  cfg.augment_cfg.max_fraction =
      j.value("augment_max_fraction", cfg.augment_cfg.max_fraction);
  return cfg;
}

// --- checkpoint io -----------------------------------------------------------------

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json meta;
  meta["artifact"] = "checkpoint";
  meta["checkpoint_version"] = ck.version;
  meta["spec"] = json::parse(model_spec_to_json(ck.spec));
  meta["config"] = json::parse(train_config_to_json(ck.config));
  meta["mode"] = ck.state.mode == Mode::train ? "train" : "eval";
  meta["opt_t"] = ck.opt.t;

  json log;
  log["eta_max"] = ck.log.eta_max;
  log["lr_find_ran"] = ck.log.lr_find_ran;
  if (ck.log.lr_find_ran) {
    log["lr_find"] = {{"eta_max", ck.log.lr_find.eta_max},
                      {"lrs", ck.log.lr_find.lrs},
                      {"raw_losses", ck.log.lr_find.raw_losses},
                      {"smoothed_losses", ck.log.lr_find.smoothed_losses},
                      {"steps_run", ck.log.lr_find.steps_run}};
  }
  json epochs = json::array();
  for (const auto& e : ck.log.epochs) {
    json je;
    je["mean_loss"] = e.mean_loss;
    json batches = json::array();
    for (const auto& [loss, size] : e.batches)
      batches.push_back({loss, size});
    je["batches"] = std::move(batches);
    epochs.push_back(std::move(je));
  }
  log["epochs"] = std::move(epochs);
  log["dropped_singleton_batches"] = ck.log.dropped_singleton_batches;
  meta["log"] = std::move(log);

  json rng = json::array();
  for (auto word : ck.rng_state) rng.push_back(std::to_string(word));
  meta["rng_state"] = std::move(rng);

  json bn_batches;
  for (const auto& [name, stats] : ck.state.bn) bn_batches[name] = stats.batches;
  meta["bn_batches"] = std::move(bn_batches);

  if (!ck.run_config_json.empty())
    meta["run_config"] = json::parse(ck.run_config_json);

  Container c;
  c.metadata = meta.dump();
  for (const auto& [name, t] : ck.state.params)
    c.tensors.emplace_back("param/" + name, t);
  for (const auto& [name, stats] : ck.state.bn) {
    c.tensors.emplace_back("bn/" + name + ".mean", stats.mean);
    c.tensors.emplace_back("bn/" + name + ".var", stats.var);
  }
  for (const auto& [name, t] : ck.opt.m)
    c.tensors.emplace_back("opt/m/" + name, t);
  for (const auto& [name, t] : ck.opt.v)
    c.tensors.emplace_back("opt/v/" + name, t);
  write_container(c, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  auto meta = json::parse(c.metadata, nullptr, false);
  check(!meta.is_discarded(), "checkpoint: '", path,
        "': metadata block is not valid JSON");
  check(meta.value("artifact", "") == "checkpoint", "checkpoint: '", path,
        "' is not a checkpoint container");

  Checkpoint ck;
  ck.version = meta.at("checkpoint_version").get<std::uint32_t>();
  check(ck.version == Checkpoint::kCheckpointVersion, "checkpoint: '", path,
        "': unsupported checkpoint version ", ck.version);
  ck.spec = model_spec_from_json(meta.at("spec").dump());
  ck.config = train_config_from_json(meta.at("config").dump());
  ck.state.mode =
      meta.value("mode", "train") == std::string("eval") ? Mode::eval : Mode::train;
  ck.opt.t = meta.at("opt_t").get<std::int64_t>();

  const auto& log = meta.at("log");
  ck.log.eta_max = log.at("eta_max").get<double>();
  ck.log.lr_find_ran = log.at("lr_find_ran").get<bool>();
  if (ck.log.lr_find_ran) {
    const auto& lf = log.at("lr_find");
    ck.log.lr_find.eta_max = lf.at("eta_max").get<double>();
    ck.log.lr_find.lrs = lf.at("lrs").get<std::vector<double>>();
    ck.log.lr_find.raw_losses = lf.at("raw_losses").get<std::vector<double>>();
    ck.log.lr_find.smoothed_losses =
        lf.at("smoothed_losses").get<std::vector<double>>();
    ck.log.lr_find.steps_run = lf.at("steps_run").get<std::int64_t>();
  }
  for (const auto& je : log.at("epochs")) {
    EpochLog e;
    e.mean_loss = je.at("mean_loss").get<double>();
    for (const auto& jb : je.at("batches"))
      e.batches.emplace_back(jb.at(0).get<double>(),
                             jb.at(1).get<std::int64_t>());
    ck.log.epochs.push_back(std::move(e));
  }
  ck.log.dropped_singleton_batches =
      log.value("dropped_singleton_batches", std::int64_t(0));

  const auto& rng = meta.at("rng_state");
  for (std::size_t i = 0; i < 4; ++i)
    ck.rng_state[i] = parse_u64(rng.at(i).get<std::string>());

  if (meta.contains("run_config"))
    ck.run_config_json = meta["run_config"].dump();

  const auto bn_batches = meta.at("bn_batches");
  for (const auto& [name, tensor] : c.tensors) {
    if (name.starts_with("param/")) {
      ck.state.params.emplace(name.substr(6), tensor);
    } else if (name.starts_with("bn/")) {
      std::string rest = name.substr(3);
      if (rest.ends_with(".mean")) {
        const std::string key = rest.substr(0, rest.size() - 5);
        auto& stats = ck.state.bn[key];
        stats.mean = tensor;
        stats.batches = bn_batches.at(key).get<std::int64_t>();
      } else if (rest.ends_with(".var")) {
        ck.state.bn[rest.substr(0, rest.size() - 4)].var = tensor;
      } else {
        fail("checkpoint: '", path, "': unexpected tensor '", name, "'");
      }
    } else if (name.starts_with("opt/m/")) {
      ck.opt.m.emplace(name.substr(6), tensor);
    } else if (name.starts_with("opt/v/")) {
      ck.opt.v.emplace(name.substr(6), tensor);
    } else {
      fail("checkpoint: '", path, "': unexpected tensor '", name, "'");
    }
  }
  check(!ck.state.params.empty(), "checkpoint: '", path,
        "': no parameters in the container");
  return ck;
}

}  // namespace rba
