#include "quotrec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

using json = nlohmann::json;

namespace quotrec {

namespace {

constexpr char kMagic[8] = {'Q', 'R', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const QuoteRecModel& model,
                     const TrainConfig& cfg, const Vocabulary& vocab,
                     const QuotationSet& quotes, const CheckpointMetrics& metrics) {
    json header;
    header["version"] = kCheckpointVersion;
    header["config"] = json::parse(train_config_to_json(cfg));
    header["vocab"] = vocab.tokens;
    header["quotations"] = quotes.texts;
    header["metrics"] = {{"valid_MAP", metrics.valid_map}, {"valid_P1", metrics.valid_p1},
                         {"valid_P3", metrics.valid_p3},   {"valid_NDCG5", metrics.valid_ndcg5},
                         {"best_epoch", metrics.best_epoch}};
    json manifest = json::array();
    for (const auto& item : model.params.items)
        manifest.push_back({{"name", item.name}, {"shape", item.tensor.shape()}});
    header["tensors"] = manifest;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& item : model.params.items) {
        const auto& v = item.tensor.value();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw DataError("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    const std::uint64_t hlen = read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated checkpoint header: " + path);
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.at("version").get<int>() != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " +
                        std::to_string(header.at("version").get<int>()));

    LoadedCheckpoint ck;
    ck.config = train_config_from_json(header.at("config").dump());
    ck.vocab = Vocabulary();
    ck.vocab.tokens.clear();
    ck.vocab.to_id.clear();
    for (const auto& t : header.at("vocab")) {
        const std::string tok = t.get<std::string>();
        ck.vocab.to_id.emplace(tok, static_cast<int>(ck.vocab.tokens.size()));
        ck.vocab.tokens.push_back(tok);
    }
    for (const auto& q : header.at("quotations")) {
        const std::string text = q.get<std::string>();
        std::vector<int> ids;
        for (const auto& tok : tokenize(text)) ids.push_back(ck.vocab.id_of(tok));
        ck.quotes.texts.push_back(text);
        ck.quotes.token_ids.push_back(std::move(ids));
    }
    const auto& jm = header.at("metrics");
    ck.metrics.valid_map = jm.at("valid_MAP").get<double>();
    ck.metrics.valid_p1 = jm.at("valid_P1").get<double>();
    ck.metrics.valid_p3 = jm.at("valid_P3").get<double>();
    ck.metrics.valid_ndcg5 = jm.at("valid_NDCG5").get<double>();
    ck.metrics.best_epoch = jm.at("best_epoch").get<int>();

    Rng rng(0); // init values are fully overwritten below
    ck.model = std::make_shared<QuoteRecModel>(ck.config.model, ck.vocab.size(),
                                               ck.quotes.size(), rng);
    const auto& manifest = header.at("tensors");
    if (manifest.size() != ck.model->params.items.size())
        throw DataError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < ck.model->params.items.size(); ++i) {
        auto& item = ck.model->params.items[i];
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != item.name)
            throw DataError("checkpoint tensor order mismatch at " + item.name);
        if (entry.at("shape").get<Shape>() != item.tensor.shape())
            throw DataError("checkpoint shape mismatch for " + item.name);
        auto& v = item.tensor.value();
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint payload at " + item.name);
    }
    return ck;
}

} // namespace quotrec
