#include "quotrec/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace quotrec {

namespace {

bool is_cjk(char32_t c) {
    return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
           (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF);
}

// minimal UTF-8 decode; invalid bytes fall through as single units
char32_t decode_utf8(const std::string& s, std::size_t& i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        ++i;
        return c;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
        extra = 1;
        cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
        extra = 2;
        cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
        extra = 3;
        cp = c & 0x07;
    } else {
        ++i;
        return c;
    }
    std::size_t start = i;
    ++i;
    for (int k = 0; k < extra; ++k) {
        if (i >= s.size() || (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
            i = start + 1;
            return c;
        }
        cp = (cp << 6) | (static_cast<unsigned char>(s[i]) & 0x3F);
        ++i;
    }
    return cp;
}

void encode_utf8(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::vector<RawConversation> load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::vector<RawConversation> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
        }
        RawConversation rc;
        try {
            rc.id = j.at("id").get<std::string>();
            rc.turns = j.at("turns").get<std::vector<std::string>>();
            if (!j.at("quote").is_null()) rc.quote = j.at("quote").get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad record fields: " + e.what());
        }
        if (rc.turns.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": conversation has no turns");
        out.push_back(std::move(rc));
    }
    return out;
}

void write_split(const std::vector<RawConversation>& convs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus file: " + path);
    for (const auto& c : convs) {
        json j;
        j["id"] = c.id;
        j["turns"] = c.turns;
        if (c.quote)
            j["quote"] = *c.quote;
        else
            j["quote"] = nullptr;
        out << j.dump() << "\n";
    }
}

} // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::size_t i = 0;
    while (i < text.size()) {
        const char32_t cp = decode_utf8(text, i);
        if (cp < 0x80) {
            const char c = static_cast<char>(cp);
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else {
                if (!cur.empty()) out.push_back(std::move(cur));
                cur.clear();
            }
        } else if (is_cjk(cp)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            std::string one;
            encode_utf8(cp, one);
            out.push_back(std::move(one));
        } else {
            encode_utf8(cp, cur);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary::Vocabulary() {
    tokens = {"<pad>", "<cls>", "<unk>"};
    to_id = {{"<pad>", kPad}, {"<cls>", kCls}, {"<unk>", kUnk}};
}

int Vocabulary::add(const std::string& tok) {
    auto it = to_id.find(tok);
    if (it != to_id.end()) return it->second;
    const int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    to_id.emplace(tok, id);
    return id;
}

RawCorpus load_raw_corpus(const std::string& dir) {
    RawCorpus raw;
    const std::string qpath = (fs::path(dir) / "quotations.txt").string();
    std::ifstream qin(qpath);
    if (!qin) throw DataError("cannot open quotations file: " + qpath);
    std::string line;
    while (std::getline(qin, line))
        if (!line.empty()) raw.quotations.push_back(line);
    if (raw.quotations.size() < 2)
        throw DataError("quotation list needs at least 2 entries, got " +
                        std::to_string(raw.quotations.size()));
    raw.train = load_split((fs::path(dir) / "train.jsonl").string());
    raw.valid = load_split((fs::path(dir) / "valid.jsonl").string());
    raw.test = load_split((fs::path(dir) / "test.jsonl").string());
    return raw;
}

void write_raw_corpus(const RawCorpus& raw, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream qout((fs::path(dir) / "quotations.txt").string(), std::ios::binary);
    for (const auto& q : raw.quotations) qout << q << "\n";
    write_split(raw.train, (fs::path(dir) / "train.jsonl").string());
    write_split(raw.valid, (fs::path(dir) / "valid.jsonl").string());
    write_split(raw.test, (fs::path(dir) / "test.jsonl").string());
}

Conversation tokenize_conversation(const RawConversation& raw, const Vocabulary& vocab,
                                   const QuotationSet& quotes) {
    Conversation c;
    c.id = raw.id;
    for (const auto& turn : raw.turns) {
        std::vector<int> ids;
        for (const auto& tok : tokenize(turn)) ids.push_back(vocab.id_of(tok));
        c.turns.push_back(std::move(ids));
    }
    if (raw.quote) {
        auto it = std::find(quotes.texts.begin(), quotes.texts.end(), *raw.quote);
        if (it == quotes.texts.end())
            throw DataError("record " + raw.id + ": unknown quotation \"" + *raw.quote + "\"");
        c.gold = static_cast<int>(it - quotes.texts.begin());
    }
    return c;
}

Corpus load_corpus(const std::string& dir, const Vocabulary* fixed_vocab) {
    const RawCorpus raw = load_raw_corpus(dir);
    Corpus corpus;
    if (fixed_vocab) {
        corpus.vocab = *fixed_vocab;
    } else {
        // counts over train conversations only
        std::unordered_map<std::string, int> counts;
        for (const auto& c : raw.train)
            for (const auto& turn : c.turns)
                for (const auto& tok : tokenize(turn)) ++counts[tok];
        // deterministic insertion order: first occurrence order in the split
        for (const auto& c : raw.train)
            for (const auto& turn : c.turns)
                for (const auto& tok : tokenize(turn))
                    if (counts[tok] >= corpus.vocab.min_count) corpus.vocab.add(tok);
        // quotation tokens always enter the vocabulary (the catalog is fixed
        // at training time; min_count would drop words that occur once)
        for (const auto& q : raw.quotations)
            for (const auto& tok : tokenize(q)) corpus.vocab.add(tok);
    }
    for (const auto& q : raw.quotations) {
        std::vector<int> ids;
        for (const auto& tok : tokenize(q)) ids.push_back(corpus.vocab.id_of(tok));
        corpus.quotes.texts.push_back(q);
        corpus.quotes.token_ids.push_back(std::move(ids));
    }
    for (const auto& rc : raw.train)
        corpus.train.push_back(tokenize_conversation(rc, corpus.vocab, corpus.quotes));
    for (const auto& rc : raw.valid)
        corpus.valid.push_back(tokenize_conversation(rc, corpus.vocab, corpus.quotes));
    for (const auto& rc : raw.test)
        corpus.test.push_back(tokenize_conversation(rc, corpus.vocab, corpus.quotes));
    return corpus;
}

std::vector<Batch> make_batches(const std::vector<Conversation>& convs, int batch_size) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<Batch> out;
    for (std::size_t start = 0; start < convs.size(); start += static_cast<std::size_t>(batch_size)) {
        Batch b;
        const std::size_t end = std::min(convs.size(), start + static_cast<std::size_t>(batch_size));
        std::size_t max_len = 1;
        for (std::size_t i = start; i < end; ++i)
            for (const auto& t : convs[i].turns) max_len = std::max(max_len, t.size());
        for (std::size_t i = start; i < end; ++i) {
            Conversation c = convs[i];
            for (auto& t : c.turns) t.resize(max_len, Vocabulary::kPad);
            b.convs.push_back(std::move(c));
        }
        out.push_back(std::move(b));
    }
    return out;
}

double load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                                  EmbeddingTable& table) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    const int dim = table.dim;
    int covered = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        std::vector<double> vec;
        vec.reserve(static_cast<std::size_t>(dim));
        double v;
        while (ls >> v) vec.push_back(v);
        if (static_cast<int>(vec.size()) != dim)
            throw ConfigError("embedding for token \"" + tok + "\" has " +
                              std::to_string(vec.size()) + " values, expected " +
                              std::to_string(dim));
        auto it = vocab.to_id.find(tok);
        if (it == vocab.to_id.end()) continue; // token outside vocab: skip
        std::copy(vec.begin(), vec.end(),
                  table.weights.value().begin() + static_cast<std::size_t>(it->second) * dim);
        ++covered;
    }
    const int real = vocab.size() - 3;
    return real > 0 ? static_cast<double>(covered) / real : 0.0;
}

void synth_corpus(const SynthParams& p, const std::string& out_dir) {
    if (p.n_q < 2) throw ConfigError("synth_corpus: n_q must be >= 2");
    if (p.noise < 0.0 || p.noise > 1.0) throw ConfigError("synth_corpus: noise must be in [0,1]");
    Rng rng(p.seed);

    // disjoint topic word sets per quotation, filler pool for everything else
    std::vector<std::vector<std::string>> topics(static_cast<std::size_t>(p.n_q));
    for (int k = 0; k < p.n_q; ++k)
        for (int j = 0; j < p.topic_size; ++j)
            topics[static_cast<std::size_t>(k)].push_back("topic" + std::to_string(k) + "w" +
                                                          std::to_string(j));
    std::vector<std::string> filler(static_cast<std::size_t>(p.vocab_size));
    for (int i = 0; i < p.vocab_size; ++i) filler[static_cast<std::size_t>(i)] = "w" + std::to_string(i);

    RawCorpus raw;
    // quotation texts use their own pseudo-language tokens
    for (int k = 0; k < p.n_q; ++k) {
        std::string text;
        for (int j = 0; j < p.quote_len; ++j) {
            if (j) text += " ";
            text += "q" + std::to_string(k) + "v" + std::to_string(j);
        }
        raw.quotations.push_back(text);
    }

    std::vector<RawConversation> all;
    for (int i = 0; i < p.n_convs; ++i) {
        RawConversation rc;
        rc.id = "conv" + std::to_string(i);
        const int gold = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.n_q)));
        const int n_context = 1 + static_cast<int>(rng.below(3)); // 1..3 earlier turns
        for (int t = 0; t < n_context; ++t) {
            std::string turn;
            for (int j = 0; j < p.context_len; ++j) {
                if (j) turn += " ";
                turn += filler[rng.below(filler.size())];
            }
            rc.turns.push_back(std::move(turn));
        }
        std::string query;
        const auto& topic = topics[static_cast<std::size_t>(gold)];
        for (int j = 0; j < p.query_len; ++j) {
            if (j) query += " ";
            if (rng.uniform() < p.noise)
                query += filler[rng.below(filler.size())];
            else
                query += topic[rng.below(topic.size())];
        }
        rc.turns.push_back(std::move(query));
        rc.quote = raw.quotations[static_cast<std::size_t>(gold)];
        all.push_back(std::move(rc));
    }

    const int n_train = p.n_convs * 8 / 10;
    const int n_valid = p.n_convs / 10;
    raw.train.assign(all.begin(), all.begin() + n_train);
    raw.valid.assign(all.begin() + n_train, all.begin() + n_train + n_valid);
    raw.test.assign(all.begin() + n_train + n_valid, all.end());
    write_raw_corpus(raw, out_dir);

    json jt = json::array();
    for (const auto& t : topics) jt.push_back(t);
    std::ofstream tout((fs::path(out_dir) / "topics.json").string(), std::ios::binary);
    tout << jt.dump() << "\n";
}

std::vector<std::vector<std::string>> load_topics(const std::string& dir) {
    std::ifstream in((fs::path(dir) / "topics.json").string());
    if (!in) throw DataError("cannot open topics.json in " + dir);
    json j;
    in >> j;
    return j.get<std::vector<std::vector<std::string>>>();
}

} // namespace quotrec
