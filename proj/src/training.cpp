#include "quotrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

using json = nlohmann::json;

namespace quotrec {

void TrainConfig::validate() const {
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (mu < 0.0) throw ConfigError("mu must be >= 0");
    if (model.dropout < 0.0 || model.dropout >= 1.0)
        throw ConfigError("dropout must be in [0,1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (model.dim < 1 || model.hidden < 1 || model.n_heads < 1 || model.n_layers < 0 ||
        model.d_ff < 1 || model.max_turn_len < 1)
        throw ConfigError("model dimensions must be positive");
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["model"]["dim"] = cfg.model.dim;
    j["model"]["hidden"] = cfg.model.hidden;
    j["model"]["n_layers"] = cfg.model.n_layers;
    j["model"]["n_heads"] = cfg.model.n_heads;
    j["model"]["d_ff"] = cfg.model.d_ff;
    j["model"]["max_turn_len"] = cfg.model.max_turn_len;
    j["model"]["dropout"] = cfg.model.dropout;
    j["model"]["use_M"] = cfg.model.use_M;
    j["model"]["use_map_loss"] = cfg.model.use_map_loss;
    j["model"]["turn_encoder"] =
        cfg.model.turn_encoder == TurnEncoderKind::transformer ? "transformer" : "bigru";
    j["lr"] = cfg.lr;
    j["lambda"] = cfg.lambda;
    j["mu"] = cfg.mu;
    j["clip_norm"] = cfg.clip_norm;
    j["batch_size"] = cfg.batch_size;
    j["max_epochs"] = cfg.max_epochs;
    j["patience"] = cfg.patience;
    j["min_count"] = cfg.min_count;
    j["seed"] = cfg.seed;
    j["pretrained_embeddings"] = cfg.pretrained_embeddings;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    TrainConfig cfg;
    try {
        if (j.contains("model")) {
            const auto& m = j["model"];
            if (m.contains("dim")) cfg.model.dim = m["dim"].get<int>();
            if (m.contains("hidden")) cfg.model.hidden = m["hidden"].get<int>();
            if (m.contains("n_layers")) cfg.model.n_layers = m["n_layers"].get<int>();
            if (m.contains("n_heads")) cfg.model.n_heads = m["n_heads"].get<int>();
            if (m.contains("d_ff")) cfg.model.d_ff = m["d_ff"].get<int>();
            if (m.contains("max_turn_len")) cfg.model.max_turn_len = m["max_turn_len"].get<int>();
            if (m.contains("dropout")) cfg.model.dropout = m["dropout"].get<double>();
            if (m.contains("use_M")) cfg.model.use_M = m["use_M"].get<bool>();
            if (m.contains("use_map_loss")) cfg.model.use_map_loss = m["use_map_loss"].get<bool>();
            if (m.contains("turn_encoder")) {
                const std::string k = m["turn_encoder"].get<std::string>();
                if (k == "transformer")
                    cfg.model.turn_encoder = TurnEncoderKind::transformer;
                else if (k == "bigru")
                    cfg.model.turn_encoder = TurnEncoderKind::bigru;
                else
                    throw ConfigError("unknown turn_encoder: " + k);
            }
        }
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
        if (j.contains("mu")) cfg.mu = j["mu"].get<double>();
        if (j.contains("clip_norm")) cfg.clip_norm = j["clip_norm"].get<double>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
        if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"].get<int>();
        if (j.contains("patience")) cfg.patience = j["patience"].get<int>();
        if (j.contains("min_count")) cfg.min_count = j["min_count"].get<int>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("pretrained_embeddings"))
            cfg.pretrained_embeddings = j["pretrained_embeddings"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

void Adam::step(ParamRegistry& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& item : params.items) {
        auto& m = state_[item.name];
        auto& val = item.tensor.value();
        auto& grad = item.tensor.grad();
        if (m.m.size() != val.size()) {
            m.m.assign(val.size(), 0.0);
            m.v.assign(val.size(), 0.0);
        }
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double g = grad[i];
            if (std::isnan(g))
                throw TrainingDiverged("NaN gradient in parameter " + item.name);
            m.m[i] = beta1_ * m.m[i] + (1.0 - beta1_) * g;
            m.v[i] = beta2_ * m.v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m.m[i] / bc1;
            const double vhat = m.v[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
        item.tensor.zero_grad();
    }
}

void clip_gradients(ParamRegistry& params, double max_norm) {
    double sq = 0.0;
    for (auto& item : params.items)
        for (double g : item.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& item : params.items)
        for (double& g : item.tensor.grad()) g *= scale;
}

std::string epoch_log_to_json(const EpochLog& e) {
    json j;
    j["epoch"] = e.epoch;
    j["rec_loss"] = e.rec_loss;
    j["map_loss"] = e.map_loss;
    j["total"] = e.total;
    j["valid_MAP"] = e.valid_map;
    j["valid_P1"] = e.valid_p1;
    j["valid_P3"] = e.valid_p3;
    j["valid_NDCG5"] = e.valid_ndcg5;
    return j.dump();
}

EvalReport evaluate_model(const QuoteRecModel& model, const std::vector<Conversation>& convs,
                          const QuotationSet& quotes) {
    Rng rng(0);
    const Tensor Q = encode_quotations(model, quotes, /*training=*/false, rng);
    std::vector<int> ranks;
    ranks.reserve(convs.size());
    for (const auto& c : convs) {
        const RankedResult r = predict(model, c.turns, Q, model.n_q);
        ranks.push_back(rank_of_gold(r, c.gold));
    }
    return compute_metrics(ranks);
}

double mean_mapping_distance(const QuoteRecModel& model, const std::vector<Conversation>& convs,
                             const QuotationSet& quotes) {
    Rng rng(0);
    const Tensor Q = encode_quotations(model, quotes, /*training=*/false, rng);
    double acc = 0.0;
    for (const auto& c : convs) {
        const ConvEncoding enc = encode_conversation(model, c.turns, /*training=*/false, rng);
        const Tensor mapped = model.cfg.use_M ? matmul(model.M, enc.r_query) : enc.r_query;
        acc += sqdist(mapped, slice_row(Q, c.gold)).item();
    }
    return acc / static_cast<double>(convs.size());
}

namespace {

std::vector<std::vector<double>> snapshot_params(const ParamRegistry& reg) {
    std::vector<std::vector<double>> out;
    out.reserve(reg.items.size());
    for (const auto& item : reg.items) out.push_back(item.tensor.value());
    return out;
}

void restore_params(ParamRegistry& reg, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < reg.items.size(); ++i)
        reg.items[i].tensor.value() = snap[i];
}

} // namespace

TrainResult train(const TrainConfig& cfg, const Corpus& corpus, std::ostream* log_stream) {
    cfg.validate();
    if (corpus.train.empty() || corpus.valid.empty())
        throw DataError("train: empty train or valid split");

    Rng rng(cfg.seed);
    auto model = std::make_shared<QuoteRecModel>(cfg.model, corpus.vocab.size(),
                                                 corpus.quotes.size(), rng);
    if (!cfg.pretrained_embeddings.empty()) {
        load_pretrained_embeddings(cfg.pretrained_embeddings, corpus.vocab, model->conv_embed);
        load_pretrained_embeddings(cfg.pretrained_embeddings, corpus.vocab, model->quote_embed);
    }

    Adam adam;
    TrainResult result;
    result.model = model;
    std::vector<std::vector<double>> best_snapshot = snapshot_params(model->params);
    int epochs_without_improvement = 0;
    const double lambda = cfg.model.use_map_loss ? cfg.lambda : 0.0;

    std::vector<Conversation> order = corpus.train;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double ep_rec = 0.0, ep_map = 0.0, ep_total = 0.0;
        int n_batches = 0;
        for (const Batch& batch : make_batches(order, cfg.batch_size)) {
            Tape tape;
            Rng step_rng(rng.next());
            // quotation-encoder parameters move every step, so Q is rebuilt
            // once per step and shared by the whole batch
            const Tensor Q = encode_quotations(*model, corpus.quotes, /*training=*/true, step_rng);
            Tensor rec_sum = Tensor::scalar(0.0);
            Tensor map_sum = Tensor::scalar(0.0);
            for (const auto& conv : batch.convs) {
                const ConvEncoding enc =
                    encode_conversation(*model, conv.turns, /*training=*/true, step_rng);
                const Scores s = score(*model, enc.h_c, enc.r_query, Q);
                rec_sum = add(rec_sum, recommendation_loss(s.logits, conv.gold));
                if (cfg.model.use_map_loss)
                    map_sum = add(map_sum, mapping_loss(s.mapped, Q, conv.gold));
            }
            const double inv = 1.0 / static_cast<double>(batch.convs.size());
            const Tensor rec = mulc(rec_sum, inv);
            const Tensor map = mulc(map_sum, inv);
            const Tensor l2 = l2_penalty(model->params);
            const CombinedLoss loss = combined_loss(rec, map, lambda, l2, cfg.mu);
            if (std::isnan(loss.breakdown.total))
                throw TrainingDiverged("loss is NaN at epoch " + std::to_string(epoch) +
                                       ", step " + std::to_string(n_batches + 1));
            tape.backward(loss.total);
            clip_gradients(model->params, cfg.clip_norm);
            adam.step(model->params, cfg.lr);
            ep_rec += loss.breakdown.rec;
            ep_map += loss.breakdown.map;
            ep_total += loss.breakdown.total;
            ++n_batches;
        }

        const EvalReport valid = evaluate_model(*model, corpus.valid, corpus.quotes);
        EpochLog e;
        e.epoch = epoch;
        e.rec_loss = ep_rec / n_batches;
        e.map_loss = ep_map / n_batches;
        e.total = ep_total / n_batches;
        e.valid_map = valid.map;
        e.valid_p1 = valid.p1;
        e.valid_p3 = valid.p3;
        e.valid_ndcg5 = valid.ndcg5;
        result.log.push_back(e);
        if (log_stream) *log_stream << epoch_log_to_json(e) << "\n" << std::flush;

        if (valid.map > result.best_valid_map || result.best_epoch < 0) {
            result.best_valid_map = valid.map;
            result.best_epoch = epoch;
            best_snapshot = snapshot_params(model->params);
            epochs_without_improvement = 0;
        } else {
            ++epochs_without_improvement;
            if (epochs_without_improvement > cfg.patience) break;
        }
    }

    restore_params(model->params, best_snapshot);
    return result;
}

GridResult grid_search(const std::vector<TrainConfig>& configs, const Corpus& corpus,
                       std::ostream* log_stream) {
    if (configs.empty()) throw ConfigError("grid_search: no configs");
    GridResult out;
    for (const auto& cfg : configs) {
        GridCell cell;
        cell.config = cfg;
        try {
            TrainResult r = train(cfg, corpus, log_stream);
            cell.valid_map = r.best_valid_map;
            const int idx = static_cast<int>(out.cells.size());
            if (out.best_index < 0 || cell.valid_map > out.cells[static_cast<std::size_t>(out.best_index)].valid_map) {
                out.best_index = idx;
                out.best_model = r.model;
            }
        } catch (const Error& e) {
            cell.failed = true;
            cell.error = e.what();
        }
        out.cells.push_back(std::move(cell));
    }
    return out;
}

} // namespace quotrec
