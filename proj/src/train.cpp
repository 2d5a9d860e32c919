#include "ket/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ket/optim.hpp"

namespace ket {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("train config: lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be at least 1");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["grad_clip"] = grad_clip;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

namespace {

int64_t expected_of(const Example& ex) {
  if (ex.label) return *ex.label;
  if (ex.answer) return *ex.answer;
  throw std::invalid_argument("example has neither a label nor an answer");
}

// Loss and correctness of one example, forward only.
std::pair<double, bool> eval_one(TaskModel& m, const Example& ex, DescMemo* memo) {
  const TaskOutput out = task_forward(m, ex, nullptr, memo);
  if (!out.loss.defined()) throw std::invalid_argument("example has neither a label nor an answer");
  return {out.loss.value(), out.prediction == expected_of(ex)};
}

}  // namespace

EvalStats evaluate(TaskModel& m, const Dataset& data, int64_t jobs) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int64_t n = data.size();
  std::vector<double> losses(static_cast<size_t>(n), 0.0);
  std::vector<char> correct(static_cast<size_t>(n), 0);
  jobs = std::max<int64_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    DescMemo memo;
    DescMemo* mp = m.config().dropout > 0.0 ? nullptr : &memo;
    for (int64_t i = 0; i < n; ++i) {
      const auto [loss, ok] = eval_one(m, data.examples[static_cast<size_t>(i)], mp);
      losses[static_cast<size_t>(i)] = loss;
      correct[static_cast<size_t>(i)] = ok ? 1 : 0;
    }
  } else {
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int64_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w]() {
        try {
          DescMemo memo;
          DescMemo* mp = m.config().dropout > 0.0 ? nullptr : &memo;
          for (int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            const auto [loss, ok] = eval_one(m, data.examples[static_cast<size_t>(i)], mp);
            losses[static_cast<size_t>(i)] = loss;
            correct[static_cast<size_t>(i)] = ok ? 1 : 0;
          }
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  EvalStats s;
  s.count = n;
  s.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  s.accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), 1)) /
               static_cast<double>(n);
  return s;
}

TrainResult train(TaskModel& m, const Dataset& data, const Dataset* eval_data,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");

  AdamWOptions aopts;
  aopts.lr = cfg.lr;
  aopts.weight_decay = cfg.weight_decay;
  aopts.max_grad_norm = cfg.grad_clip;
  AdamW opt(m.named_parameters(), aopts);

  const double rate = m.config().dropout;
  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<size_t> order(static_cast<size_t>(data.size()));
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      Tape tape;
      DescMemo memo;
      DescMemo* mp = rate > 0.0 ? nullptr : &memo;
      DropoutCtx dctx{rate, &dropout_rng};
      const DropoutCtx* dp = rate > 0.0 ? &dctx : nullptr;
      Tensor total;
      for (size_t i = start; i < stop; ++i) {
        const TaskOutput out = task_forward(m, data.examples[order[i]], dp, mp);
        if (!out.loss.defined()) {
          throw std::invalid_argument("train: example has neither a label nor an answer");
        }
        total = total.defined() ? add(total, out.loss) : out.loss;
      }
      const Tensor batch_loss = scale(total, 1.0 / static_cast<double>(stop - start));
      opt.zero_grad();
      tape.backward(batch_loss);
      opt.step();
    }

    EpochMetrics em;
    em.epoch = epoch;
    const EvalStats ts = evaluate(m, data);
    em.train_loss = ts.mean_loss;
    em.train_accuracy = ts.accuracy;
    if (eval_data != nullptr) em.eval_accuracy = evaluate(m, *eval_data).accuracy;
    result.epochs.push_back(em);
  }
  return result;
}

std::string metrics_tsv(const TrainResult& r) {
  std::ostringstream out;
  out << "epoch\ttrain_loss\ttrain_accuracy\teval_accuracy\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const EpochMetrics& em : r.epochs) {
    out << em.epoch << "\t" << em.train_loss << "\t" << em.train_accuracy << "\t";
    if (em.eval_accuracy >= 0.0) {
      out << em.eval_accuracy;
    } else {
      out << "-";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace ket
