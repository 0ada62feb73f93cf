#pragma once

#include <memory>
#include <string>

#include "quotrec/data.hpp"
#include "quotrec/model.hpp"
#include "quotrec/training.hpp"

namespace quotrec {

// Container format: magic + JSON header (config, vocab, quotations, metrics,
// tensor manifest) + little-endian float64 payload in registry order.
// Loading then saving reproduces the bytes exactly.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMetrics {
    double valid_map = 0.0, valid_p1 = 0.0, valid_p3 = 0.0, valid_ndcg5 = 0.0;
    int best_epoch = -1;
};

void save_checkpoint(const std::string& path, const QuoteRecModel& model,
                     const TrainConfig& cfg, const Vocabulary& vocab,
                     const QuotationSet& quotes, const CheckpointMetrics& metrics);

struct LoadedCheckpoint {
    TrainConfig config;
    Vocabulary vocab;
    QuotationSet quotes;
    CheckpointMetrics metrics;
    std::shared_ptr<QuoteRecModel> model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace quotrec
