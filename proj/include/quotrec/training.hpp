#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "quotrec/data.hpp"
#include "quotrec/evaluation.hpp"
#include "quotrec/losses.hpp"
#include "quotrec/model.hpp"

namespace quotrec {

struct TrainConfig {
    ModelConfig model;
    double lr = 1e-4;
    double lambda = 1e-3; // mapping-loss weight, grid {1e-4, 1e-3}
    double mu = 1e-5;     // L2 coefficient
    double clip_norm = 5.0;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 5;
    int min_count = 2;
    std::uint64_t seed = 42;
    std::string pretrained_embeddings; // optional path

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);

class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // bias-corrected update in place; grads are zeroed afterwards.
    // NaN gradients abort with the parameter name.
    void step(ParamRegistry& params, double lr);

    int step_count() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    int t_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

// scales all grads so the global norm is at most max_norm
void clip_gradients(ParamRegistry& params, double max_norm);

struct EpochLog {
    int epoch = 0;
    double rec_loss = 0.0;
    double map_loss = 0.0;
    double total = 0.0;
    double valid_map = 0.0, valid_p1 = 0.0, valid_p3 = 0.0, valid_ndcg5 = 0.0;
};

std::string epoch_log_to_json(const EpochLog& e);

struct TrainResult {
    std::shared_ptr<QuoteRecModel> model; // best-valid-MAP parameters
    std::vector<EpochLog> log;
    double best_valid_map = 0.0;
    int best_epoch = -1;
};

struct TrainingDiverged : Error {
    using Error::Error;
};

// Adam + early stopping on validation MAP; returns the best checkpoint seen.
TrainResult train(const TrainConfig& cfg, const Corpus& corpus,
                  std::ostream* log_stream = nullptr);

// evaluate a frozen model over a split (Q cached once)
EvalReport evaluate_model(const QuoteRecModel& model, const std::vector<Conversation>& convs,
                          const QuotationSet& quotes);

// mean ||M r_query - r^q_gold||^2 over a split (eval mode)
double mean_mapping_distance(const QuoteRecModel& model, const std::vector<Conversation>& convs,
                             const QuotationSet& quotes);

struct GridCell {
    TrainConfig config;
    double valid_map = 0.0;
    bool failed = false;
    std::string error;
};

struct GridResult {
    std::vector<GridCell> cells;
    int best_index = -1; // deterministic tie-break: earliest config
    std::shared_ptr<QuoteRecModel> best_model;
};

GridResult grid_search(const std::vector<TrainConfig>& configs, const Corpus& corpus,
                       std::ostream* log_stream = nullptr);

} // namespace quotrec
