#pragma once

// Training and evaluation loops: seeded permutation presentation from
// per-sequence pools, group-aware validation split, momentum SGD with
// plateau learning-rate decay, JSONL metrics, and DSQC checkpointing with
// bit-exact sequential resume. Every random stream is derived from
// (seed, purpose, epoch, sample), so a checkpoint's RNG state is the
// (seed, epoch) counter pair it stores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqdab/checkpoint.hpp"
#include "seqdab/errors.hpp"
#include "seqdab/network.hpp"
#include "seqdab/perm.hpp"
#include "seqdab/rng.hpp"
#include "seqdab/sequence.hpp"
#include "seqdab/sgd.hpp"
#include "seqdab/shard.hpp"

namespace seqdab {

struct TrainConfig {
  NetworkConfig net;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double lr_factor = 0.1;
  int patience = 3;
  double min_delta = 1e-3;
  int batch = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  int perm_cap = 24;  // presentation pool size per sequence; 0 = all n!
  double val_fraction = 0.1;
  int short_edge = 40;  // resize target before the input_hw crop
  std::string train_shard;
  std::string out_dir;

  void validate() const {
    net.validate();
    check_config(lr0 > 0 && momentum >= 0 && momentum < 1 && weight_decay >= 0,
                 "bad optimizer hyperparameters");
    check_config(lr_factor > 0 && lr_factor < 1 && patience >= 1 && min_delta >= 0,
                 "bad plateau schedule");
    check_config(batch >= 1 && epochs >= 0, "bad batch size or epoch count");
    check_config(perm_cap >= 0, "permutation cap must be non-negative");
    check_config(val_fraction >= 0 && val_fraction < 1, "validation fraction must be in [0, 1)");
    check_config(short_edge >= net.input_hw, "short edge must be at least the crop size");
  }
};

inline nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"net", to_json(cfg.net)},
          {"lr0", cfg.lr0},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"lr_factor", cfg.lr_factor},
          {"patience", cfg.patience},
          {"min_delta", cfg.min_delta},
          {"batch", cfg.batch},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"perm_cap", cfg.perm_cap},
          {"val_fraction", cfg.val_fraction},
          {"short_edge", cfg.short_edge},
          {"train_shard", cfg.train_shard},
          {"out_dir", cfg.out_dir}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.net = network_config_from_json(j.at("net"));
  cfg.lr0 = j.at("lr0").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.lr_factor = j.at("lr_factor").get<double>();
  cfg.patience = j.at("patience").get<int>();
  cfg.min_delta = j.at("min_delta").get<double>();
  cfg.batch = j.at("batch").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.perm_cap = j.at("perm_cap").get<int>();
  cfg.val_fraction = j.at("val_fraction").get<double>();
  cfg.short_edge = j.at("short_edge").get<int>();
  cfg.train_shard = j.value("train_shard", std::string());
  cfg.out_dir = j.value("out_dir", std::string());
  cfg.validate();
  return cfg;
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;
};

struct EvalMetrics {
  double loss = 0;
  double accuracy = 0;
  std::int64_t count = 0;
};

// Splits sample indices into train/validation at source granularity:
// sequences sharing a source id never straddle the split.
inline void split_train_val(const std::vector<SequenceSample>& samples, double fraction,
                            std::uint64_t seed, std::vector<int>* train, std::vector<int>* val) {
  std::vector<std::string> sources;
  for (const SequenceSample& s : samples)
    if (std::find(sources.begin(), sources.end(), s.source) == sources.end())
      sources.push_back(s.source);
  Rng rng = make_rng(seed, "split");
  std::shuffle(sources.begin(), sources.end(), rng);

  std::int64_t target = std::llround(fraction * static_cast<double>(samples.size()));
  std::vector<std::string> val_sources;
  std::int64_t val_count = 0;
  for (const std::string& src : sources) {
    if (val_count >= target) break;
    val_sources.push_back(src);
    for (const SequenceSample& s : samples) val_count += s.source == src ? 1 : 0;
  }
  train->clear();
  val->clear();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool in_val = std::find(val_sources.begin(), val_sources.end(), samples[i].source) !=
                  val_sources.end();
    (in_val ? val : train)->push_back(static_cast<int>(i));
  }
}

namespace detail {

// The sequence's presentation pool: a seeded shuffle of all n! orders,
// truncated to the cap. Cap 0 (or >= n!) keeps the full set.
inline std::vector<int> perm_pool(int n, int cap, std::uint64_t seed, int sample_idx) {
  int total = static_cast<int>(factorial(n));
  std::vector<int> pool(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) pool[static_cast<std::size_t>(i)] = i;
  if (cap > 0 && cap < total) {
    Rng rng = make_rng(seed, "pool", static_cast<std::uint64_t>(sample_idx));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(cap));
  }
  return pool;
}

}  // namespace detail

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<SequenceSample> ordered)
      : cfg_(std::move(cfg)),
        samples_(std::move(ordered)),
        net_(Network<float>::build(cfg_.net, cfg_.seed)),
        opt_(cfg_.lr0, cfg_.momentum, cfg_.weight_decay),
        sched_(cfg_.lr_factor, cfg_.patience, cfg_.min_delta) {
    cfg_.validate();
    check_config(!samples_.empty(), "training needs at least one sample");
    for (const SequenceSample& s : samples_) {
      check_config(s.n() == cfg_.net.seq_len, "sample n does not match the network's seq_len");
      check_config(s.perm == identity_perm(s.n()),
                   "trainer expects capture-ordered samples; shards store identity order");
    }
    split_train_val(samples_, cfg_.val_fraction, cfg_.seed, &train_idx_, &val_idx_);
    check_config(!train_idx_.empty(), "validation split swallowed every training source");
  }

  // One presentation of sample idx: permutation from the sequence's pool,
  // shared-offset crop (random in train mode, center otherwise), normalize.
  SequenceSample present(int idx, int epoch, bool train) const {
    const SequenceSample& raw = samples_[static_cast<std::size_t>(idx)];
    std::vector<int> pool =
        detail::perm_pool(raw.n(), cfg_.perm_cap, cfg_.seed, idx);
    Rng perm_rng = train ? make_rng(cfg_.seed, "perm", static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(idx))
                         : make_rng(cfg_.seed, "val-perm", static_cast<std::uint64_t>(idx));
    int pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(perm_rng)];
    const Permutation& perm = enumerate_permutations(raw.n())[static_cast<std::size_t>(pick)];

    SequenceSample s = shuffle_and_label(raw, perm);
    Rng crop_rng = make_rng(cfg_.seed, "crop", static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(idx));
    s = augment(s, cfg_.short_edge, cfg_.net.input_hw, train, crop_rng);
    normalize(s);
    s.seed = cfg_.seed;
    return s;
  }

  // One SGD update on an assembled batch; returns the batch loss.
  double train_step(const Tensor<float>& batch, const std::vector<int>& labels) {
    Tape<float> tape;
    Var<float> logits = net_.forward(tape, batch, true, nullptr);
    Var<float> loss = softmax_ce(logits, labels);
    double loss_value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(loss_value)) diverged("non-finite training loss");
    tape.backward(loss.id);
    try {
      for (std::size_t i = 0; i < net_.params().size(); ++i)
        opt_.step(i, net_.params()[i].value, net_.param_grad(tape, i));
    } catch (const NumericError& e) {
      diverged(e.what());
    }
    return loss_value;
  }

  EpochMetrics run_epoch(int epoch) {
    check_config(!val_idx_.empty(),
                 "epoch schedule needs a validation split; raise val_fraction or add sources");
    std::vector<int> order = train_idx_;
    Rng order_rng = make_rng(cfg_.seed, "order", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0;
    std::int64_t seen = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg_.batch)) {
      std::size_t b = std::min(static_cast<std::size_t>(cfg_.batch), order.size() - at);
      Tensor<float> batch;
      std::vector<int> labels;
      assemble(order, at, b, epoch, true, &batch, &labels);
      loss_sum += train_step(batch, labels) * static_cast<double>(b);
      seen += static_cast<std::int64_t>(b);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    EvalMetrics val = validate(epoch);
    m.val_loss = val.loss;
    m.val_acc = val.accuracy;
    double lr = opt_.lr();
    sched_.observe(m.val_loss, &lr);
    opt_.set_lr(lr);
    m.lr = lr;
    return m;
  }

  // Fixed-presentation pass over the validation split.
  EvalMetrics validate(int epoch) {
    EvalMetrics out;
    if (val_idx_.empty()) return out;
    double loss_sum = 0;
    std::int64_t correct = 0;
    for (std::size_t at = 0; at < val_idx_.size(); at += static_cast<std::size_t>(cfg_.batch)) {
      std::size_t b = std::min(static_cast<std::size_t>(cfg_.batch), val_idx_.size() - at);
      Tensor<float> batch;
      std::vector<int> labels;
      assemble(val_idx_, at, b, epoch, false, &batch, &labels);
      Tensor<float> logits = net_.predict(batch);
      loss_sum += softmax_cross_entropy(logits, labels) * static_cast<double>(b);
      std::vector<int> top = argmax_rows(logits);
      for (std::size_t i = 0; i < b; ++i) correct += top[i] == labels[i] ? 1 : 0;
    }
    out.count = static_cast<std::int64_t>(val_idx_.size());
    out.loss = loss_sum / static_cast<double>(out.count);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.count);
    return out;
  }

  // Full schedule. Writes per-epoch JSONL metrics and last/best checkpoints
  // into cfg.out_dir when set; resume_path restarts from a saved epoch
  // boundary and reproduces the uninterrupted run bit-exactly.
  std::vector<EpochMetrics> run(const std::string& resume_path = "") {
    int epoch0 = 0;
    if (!resume_path.empty()) epoch0 = restore(resume_path);

    std::ofstream metrics;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      std::string path = cfg_.out_dir + "/metrics.jsonl";
      metrics.open(path, epoch0 == 0 ? std::ios::trunc : std::ios::app);
      check_io(metrics.good(), "cannot open metrics file: " + path);
    }

    std::vector<EpochMetrics> history;
    for (int e = epoch0; e < cfg_.epochs; ++e) {
      EpochMetrics m = run_epoch(e);
      history.push_back(m);
      if (metrics.is_open()) {
        nlohmann::json row = {{"epoch", m.epoch},
                              {"train_loss", m.train_loss},
                              {"val_loss", m.val_loss},
                              {"val_acc", m.val_acc},
                              {"lr", m.lr}};
        metrics << row.dump() << "\n";
        metrics.flush();
        check_io(metrics.good(), "metrics write failed");
      }
      if (!cfg_.out_dir.empty()) {
        save(cfg_.out_dir + "/last.dsqc", e + 1);
        if (m.val_loss < best_val_) save(cfg_.out_dir + "/best.dsqc", e + 1);
      }
      if (m.val_loss < best_val_) best_val_ = m.val_loss;
    }
    return history;
  }

  void save(const std::string& path, int next_epoch) const {
    Checkpoint ck;
    ck.config = {{"kind", "seqdab-checkpoint"},
                 {"net", to_json(cfg_.net)},
                 {"train", to_json(cfg_)},
                 {"epoch", next_epoch},
                 {"lr", opt_.lr()},
                 {"best_val", best_val_},
                 {"sched_best", sched_.best()},
                 {"sched_bad", sched_.bad_epochs()},
                 {"rng", {{"scheme", "counter"}, {"seed", cfg_.seed}, {"epoch", next_epoch}}}};
    pack_network(ck, net_);
    pack_optimizer(ck, opt_, net_);
    save_checkpoint(path, ck);
  }

  // Restores parameters, momenta, schedule state, and the epoch cursor.
  int restore(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    check_config(to_json(cfg_.net) == ck.config.at("net"),
                 "checkpoint network config does not match: " + path);
    unpack_network(ck, net_);
    unpack_optimizer(ck, opt_, net_);
    opt_.set_lr(ck.config.at("lr").get<double>());
    best_val_ = ck.config.at("best_val").get<double>();
    sched_.restore(ck.config.at("sched_best").get<double>(),
                   ck.config.at("sched_bad").get<int>());
    return ck.config.at("epoch").get<int>();
  }

  const TrainConfig& config() const { return cfg_; }
  Network<float>& network() { return net_; }
  const Network<float>& network() const { return net_; }
  SgdOptimizer<float>& optimizer() { return opt_; }
  const std::vector<SequenceSample>& samples() const { return samples_; }
  const std::vector<int>& train_indices() const { return train_idx_; }
  const std::vector<int>& val_indices() const { return val_idx_; }

 private:
  void assemble(const std::vector<int>& idx, std::size_t at, std::size_t b, int epoch,
                bool train, Tensor<float>* batch, std::vector<int>* labels) const {
    int n = cfg_.net.seq_len, hw = cfg_.net.input_hw;
    *batch = Tensor<float>::uninit({static_cast<int>(b), 3, n, hw, hw});
    labels->resize(b);
    std::int64_t stride = static_cast<std::int64_t>(3) * n * hw * hw;
    for (std::size_t k = 0; k < b; ++k) {
      SequenceSample s = present(idx[at + k], epoch, train);
      std::memcpy(batch->data() + static_cast<std::int64_t>(k) * stride, s.frames.data(),
                  static_cast<std::size_t>(stride) * sizeof(float));
      (*labels)[k] = s.label;
    }
  }

  [[noreturn]] void diverged(const std::string& why) {
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      save(cfg_.out_dir + "/diverged.dsqc", -1);
    }
    throw NumericError("training diverged (" + why + ")" +
                       (cfg_.out_dir.empty() ? "" : "; diagnostic checkpoint written to " +
                                                        cfg_.out_dir + "/diverged.dsqc"));
  }

  TrainConfig cfg_;
  std::vector<SequenceSample> samples_;
  Network<float> net_;
  SgdOptimizer<float> opt_;
  PlateauScheduler sched_;
  std::vector<int> train_idx_;
  std::vector<int> val_idx_;
  double best_val_ = std::numeric_limits<double>::infinity();
};

// Evaluation over capture-ordered samples. When all_perms is set every
// sequence is expanded over all n! presentation orders; otherwise each
// sequence gets its fixed seeded presentation from its pool. Center crops
// throughout; accuracy counts argmax(logits) == merged class label.
inline EvalMetrics evaluate(Network<float>& net, const std::vector<SequenceSample>& ordered,
                            const TrainConfig& cfg, bool all_perms) {
  check_config(!ordered.empty(), "evaluation needs at least one sample");
  for (const SequenceSample& s : ordered)
    check_config(s.n() == cfg.net.seq_len, "sample n does not match the network's seq_len");
  int n = cfg.net.seq_len, hw = cfg.net.input_hw;
  std::int64_t stride = static_cast<std::int64_t>(3) * n * hw * hw;
  Rng dummy = make_rng(cfg.seed, "eval-noop");

  std::vector<Tensor<float>> pending;
  std::vector<int> labels;
  EvalMetrics out;
  double loss_sum = 0;
  std::int64_t correct = 0;

  auto flush = [&]() {
    if (pending.empty()) return;
    Tensor<float> batch =
        Tensor<float>::uninit({static_cast<int>(pending.size()), 3, n, hw, hw});
    for (std::size_t k = 0; k < pending.size(); ++k)
      std::memcpy(batch.data() + static_cast<std::int64_t>(k) * stride, pending[k].data(),
                  static_cast<std::size_t>(stride) * sizeof(float));
    Tensor<float> logits = net.predict(batch);
    loss_sum += softmax_cross_entropy(logits, labels) * static_cast<double>(pending.size());
    std::vector<int> top = argmax_rows(logits);
    for (std::size_t i = 0; i < top.size(); ++i) correct += top[i] == labels[i] ? 1 : 0;
    out.count += static_cast<std::int64_t>(pending.size());
    pending.clear();
    labels.clear();
  };

  auto push = [&](const SequenceSample& raw, const Permutation& perm) {
    SequenceSample s = shuffle_and_label(raw, perm);
    s = augment(s, cfg.short_edge, hw, false, dummy);
    normalize(s);
    pending.push_back(std::move(s.frames));
    labels.push_back(s.label);
    if (static_cast<int>(pending.size()) >= cfg.batch) flush();
  };

  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const SequenceSample& raw = ordered[i];
    if (all_perms) {
      for (const Permutation& p : enumerate_permutations(raw.n())) push(raw, p);
    } else {
      std::vector<int> pool =
          detail::perm_pool(raw.n(), cfg.perm_cap, cfg.seed, static_cast<int>(i));
      Rng rng = make_rng(cfg.seed, "val-perm", static_cast<std::uint64_t>(i));
      int pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      push(raw, enumerate_permutations(raw.n())[static_cast<std::size_t>(pick)]);
    }
  }
  flush();
  check_config(out.count > 0, "evaluation produced no presentations");
  out.loss = loss_sum / static_cast<double>(out.count);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.count);
  return out;
}

}  // namespace seqdab
