#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "composeq/model.hpp"

namespace composeq {

struct TrainConfig {
    double lr_peak = 5e-4;
    std::size_t warmup_steps = 4000;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    std::size_t max_steps = 5000;
    std::size_t batch_size_tokens = 4096;
    std::uint64_t seed = 1;
    double dropout = 0.1;
    double label_smoothing = 0.0;
    double clip_norm = 0.0;  // 0 disables clipping
    std::size_t log_every = 100;

    void validate() const {
        if (warmup_steps < 1) throw ConfigError("train: warmup_steps must be >= 1");
        if (lr_peak <= 0.0) throw ConfigError("train: lr_peak must be > 0");
        if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
        if (batch_size_tokens < 1)
            throw ConfigError("train: batch_size_tokens must be >= 1");
        if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
    }

    nlohmann::json to_json() const {
        return {{"lr_peak", lr_peak},
                {"warmup_steps", warmup_steps},
                {"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"max_steps", max_steps},
                {"batch_size_tokens", batch_size_tokens},
                {"seed", seed},
                {"dropout", dropout},
                {"label_smoothing", label_smoothing},
                {"clip_norm", clip_norm},
                {"log_every", log_every}};
    }
    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.lr_peak = j.at("lr_peak");
        c.warmup_steps = j.at("warmup_steps");
        c.beta1 = j.at("beta1");
        c.beta2 = j.at("beta2");
        c.eps = j.at("eps");
        c.max_steps = j.at("max_steps");
        c.batch_size_tokens = j.at("batch_size_tokens");
        c.seed = j.at("seed");
        c.dropout = j.at("dropout");
        c.label_smoothing = j.at("label_smoothing");
        c.clip_norm = j.at("clip_norm");
        c.log_every = j.at("log_every");
        return c;
    }
};

// Linear warmup to lr_peak, then inverse-square-root decay.
inline double lr_schedule(std::size_t step, const TrainConfig& cfg) {
    if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
    const double s = double(step), w = double(cfg.warmup_steps);
    return cfg.lr_peak * std::min(s / w, std::sqrt(w / s));
}

// Adam with bias-corrected first/second moments. Moments are addressable by
// parameter name so checkpoints can carry the full optimizer state.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params,
                  const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto& [name, t] : params_) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    std::size_t updates() const { return t_; }
    void set_updates(std::size_t t) { t_ = t; }

    // Scales all gradients so their global L2 norm is at most clip_norm;
    // direction is preserved. Returns the pre-clip norm.
    double clip_gradients(double clip_norm) {
        double sq = 0.0;
        for (const auto& [name, p] : params_)
            for (double g : p.grad()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (clip_norm > 0.0 && norm > clip_norm) {
            const double s = clip_norm / norm;
            for (auto& [name, p] : params_)
                for (double& g : const_cast<Tensor&>(p).grad_buf()) g *= s;
        }
        return norm;
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].second;
            auto& m = m_[i];
            auto& v = v_[i];
            const auto& g = p.grad_buf();  // zero-filled if no gradient reached p
            auto& x = p.data();
            for (std::size_t j = 0; j < x.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                x[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    const std::vector<std::pair<std::string, Tensor>>& params() const {
        return params_;
    }
    std::vector<double>& first_moment(std::size_t i) { return m_[i]; }
    std::vector<double>& second_moment(std::size_t i) { return v_[i]; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct LogEntry {
    std::size_t step;
    double loss;
    double lr;
};

// Packs length-sorted samples into batches of at most batch_size_tokens
// total (source + target) tokens. Ragged batching means no padding, so the
// token budget is the actual compute cost.
inline std::vector<Batch> plan_batches(const std::vector<EncodedSample>& data,
                                       std::size_t batch_size_tokens) {
    if (data.empty()) throw DataError("plan_batches: empty corpus");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto la = data[a].src.size() + data[a].tgt.size();
        const auto lb = data[b].src.size() + data[b].tgt.size();
        return la < lb;
    });

    std::vector<Batch> batches;
    std::vector<EncodedSample> cur;
    std::size_t cur_tokens = 0;
    for (std::size_t idx : order) {
        const std::size_t cost = data[idx].src.size() + data[idx].tgt.size() + 1;
        if (!cur.empty() && cur_tokens + cost > batch_size_tokens) {
            batches.push_back(make_batch(cur));
            cur.clear();
            cur_tokens = 0;
        }
        cur.push_back(data[idx]);
        cur_tokens += cost;
    }
    if (!cur.empty()) batches.push_back(make_batch(cur));
    return batches;
}

// Runs Adam updates over a fixed batch plan. The batch visiting order for
// epoch e is a shuffle seeded by (seed, e), so a resumed run replays exactly
// the batches an uninterrupted run would have seen.
class Trainer {
public:
    Trainer(TransformerModel& model, const std::vector<EncodedSample>& data,
            TrainConfig cfg)
        : model_(model),
          cfg_(std::move(cfg)),
          opt_(model.named_parameters(), cfg_),
          batches_(plan_batches(data, cfg_.batch_size_tokens)) {
        cfg_.validate();
    }

    AdamOptimizer& optimizer() { return opt_; }
    std::size_t step() const { return step_; }
    void set_step(std::size_t s) { step_ = s; }

    // One forward/backward/update; returns the batch loss.
    double step_once() {
        ++step_;
        const Batch& batch = batch_for_step(step_);
        model_.set_training(true);
        model_.zero_grads();
        Tensor loss = model_.teacher_forced_loss(batch, cfg_.label_smoothing);
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val)) {
            if (on_numeric_failure) on_numeric_failure();
            throw NumericsError("non-finite loss " + std::to_string(loss_val) +
                                " at step " + std::to_string(step_));
        }
        loss.backward();
        if (cfg_.clip_norm > 0.0) opt_.clip_gradients(cfg_.clip_norm);
        opt_.step(lr_schedule(step_, cfg_));
        return loss_val;
    }

    // Trains to max_steps, logging every log_every steps and at the last step.
    std::vector<LogEntry> run(std::ostream* loss_csv = nullptr) {
        std::vector<LogEntry> log;
        if (loss_csv && step_ == 0) *loss_csv << "step,loss,lr\n";
        while (step_ < cfg_.max_steps) {
            const double loss = step_once();
            if (step_ % cfg_.log_every == 0 || step_ == cfg_.max_steps) {
                const LogEntry e{step_, loss, lr_schedule(step_, cfg_)};
                log.push_back(e);
                if (loss_csv) {
                    char buf[96];
                    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e.step,
                                  e.loss, e.lr);
                    *loss_csv << buf;
                }
            }
        }
        model_.set_training(false);
        return log;
    }

    // Invoked before the NumericsError on non-finite loss; the CLI hooks a
    // diagnostic checkpoint write here.
    std::function<void()> on_numeric_failure;

private:
    const Batch& batch_for_step(std::size_t step) const {
        const std::size_t bpe = batches_.size();
        const std::size_t epoch = (step - 1) / bpe;
        const std::size_t cursor = (step - 1) % bpe;
        if (epoch != perm_epoch_ || perm_.empty()) {
            perm_.resize(bpe);
            std::iota(perm_.begin(), perm_.end(), 0);
            std::mt19937_64 rng(cfg_.seed * 0x9e3779b97f4a7c15ull + epoch + 1);
            std::shuffle(perm_.begin(), perm_.end(), rng);
            perm_epoch_ = epoch;
        }
        return batches_[perm_[cursor]];
    }

    TransformerModel& model_;
    TrainConfig cfg_;
    AdamOptimizer opt_;
    std::vector<Batch> batches_;
    std::size_t step_ = 0;
    mutable std::vector<std::size_t> perm_;
    mutable std::size_t perm_epoch_ = std::size_t(-1);
};

}  // namespace composeq
