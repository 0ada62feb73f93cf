#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "quotrec/interpretation.hpp"
#include "quotrec/training.hpp"

using namespace quotrec;
namespace fs = std::filesystem;

namespace {

struct SynthFixture {
    std::string dir;
    Corpus corpus;
    SynthFixture() {
        dir = (fs::temp_directory_path() / "quotrec_test_interp").string();
        fs::remove_all(dir);
        SynthParams p;
        p.seed = 11;
        p.n_q = 4;
        p.n_convs = 60;
        p.noise = 0.1;
        synth_corpus(p, dir);
        corpus = load_corpus(dir);
    }
    ~SynthFixture() { fs::remove_all(dir); }
};

QuoteRecModel tiny_model(int vocab_size, int n_q, std::uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 12;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout = 0.0;
    Rng rng(seed);
    return QuoteRecModel(cfg, vocab_size, n_q, rng);
}

} // namespace

TEST_CASE_FIXTURE(SynthFixture, "build_history groups training conversations by gold id") {
    const auto history = build_history(corpus.train, corpus.quotes.size());
    REQUIRE(history.size() == static_cast<std::size_t>(corpus.quotes.size()));
    std::size_t total = 0;
    for (std::size_t k = 0; k < history.size(); ++k) {
        CHECK(history[k].quote_id == static_cast<int>(k));
        for (const Conversation* c : history[k].members)
            CHECK(c->gold == static_cast<int>(k));
        total += history[k].members.size();
    }
    CHECK(total == corpus.train.size());
}

TEST_CASE_FIXTURE(SynthFixture, "query attention weights sum to one and align with ids") {
    QuoteRecModel model = tiny_model(corpus.vocab.size(), corpus.quotes.size());
    Rng rng(0);
    const Tensor Q = encode_quotations(model, corpus.quotes, false, rng);
    const auto history = build_history(corpus.train, corpus.quotes.size());
    REQUIRE(!history[0].members.empty());

    const QueryAttention qa =
        query_attention(model, slice_row(Q, 0).detached(), history[0]);
    REQUIRE(qa.weights.size() == history[0].members.size());
    CHECK(qa.conv_ids.size() == qa.weights.size());
    double s = 0.0;
    for (double w : qa.weights) {
        CHECK(w >= 0.0);
        s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i = 0; i < qa.conv_ids.size(); ++i)
        CHECK(qa.conv_ids[i] == history[0].members[i]->id);

    // transform toggle changes the distribution in general
    const QueryAttention raw =
        query_attention(model, slice_row(Q, 0).detached(), history[0], false);
    CHECK(raw.weights != qa.weights);
    double s2 = 0.0;
    for (double w : raw.weights) s2 += w;
    CHECK(s2 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE_FIXTURE(SynthFixture, "word scores cover real tokens and sum to one") {
    QuoteRecModel model = tiny_model(corpus.vocab.size(), corpus.quotes.size());
    const std::vector<int>& query = corpus.train[0].turns.back();
    const std::vector<double> scores = word_scores(model, query);
    REQUIRE(scores.size() == query.size());
    double s = 0.0;
    for (double v : scores) {
        CHECK(v >= 0.0);
        s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));

    // explicit layer out of range
    CHECK_THROWS_AS(word_scores(model, query, 5), ConfigError);

    // mean vs max head aggregation are both valid distributions
    const std::vector<double> mx =
        word_scores(model, query, -1, HeadAggregation::max);
    double sm = 0.0;
    for (double v : mx) sm += v;
    CHECK(sm == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE_FIXTURE(SynthFixture, "word scores reject encoders without attention") {
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 12;
    cfg.n_layers = 0;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.dropout = 0.0;
    Rng rng(1);
    QuoteRecModel no_attn(cfg, corpus.vocab.size(), corpus.quotes.size(), rng);
    CHECK_THROWS_AS(word_scores(no_attn, corpus.train[0].turns.back()), ConfigError);

    cfg.n_layers = 1;
    cfg.turn_encoder = TurnEncoderKind::bigru;
    Rng rng2(1);
    QuoteRecModel gru_model(cfg, corpus.vocab.size(), corpus.quotes.size(), rng2);
    CHECK_THROWS_AS(word_scores(gru_model, corpus.train[0].turns.back()), ConfigError);
}

TEST_CASE_FIXTURE(SynthFixture, "indicative words are deterministic, sorted, and filtered") {
    QuoteRecModel model = tiny_model(corpus.vocab.size(), corpus.quotes.size());
    Rng rng(0);
    const Tensor Q = encode_quotations(model, corpus.quotes, false, rng);

    InterpretOptions opt;
    opt.top_k = 5;
    const IndicativeWords a = indicative_words(model, Q, corpus, 1, opt);
    const IndicativeWords b = indicative_words(model, Q, corpus, 1, opt);
    CHECK(a.quote_id == 1);
    CHECK(a.quote_text == corpus.quotes.texts[1]);
    REQUIRE(!a.words.empty());
    CHECK(a.words.size() <= 5);
    for (std::size_t i = 0; i + 1 < a.words.size(); ++i)
        CHECK(a.words[i].second >= a.words[i + 1].second);
    REQUIRE(a.words.size() == b.words.size());
    for (std::size_t i = 0; i < a.words.size(); ++i) {
        CHECK(a.words[i].first == b.words[i].first);
        CHECK(a.words[i].second == b.words[i].second);
    }

    // stopword filtering removes the word entirely
    InterpretOptions filt = opt;
    filt.stopwords.push_back(a.words[0].first);
    const IndicativeWords c = indicative_words(model, Q, corpus, 1, filt);
    for (const auto& [w, score] : c.words) CHECK(w != a.words[0].first);

    CHECK_THROWS_AS(indicative_words(model, Q, corpus, 99, opt), ContractError);
}

TEST_CASE_FIXTURE(SynthFixture, "trained-free sanity: top words come from query vocabulary") {
    QuoteRecModel model = tiny_model(corpus.vocab.size(), corpus.quotes.size());
    Rng rng(0);
    const Tensor Q = encode_quotations(model, corpus.quotes, false, rng);
    const IndicativeWords iw = indicative_words(model, Q, corpus, 0, {});

    // collect every token appearing in quote 0's history query turns
    std::vector<std::string> allowed;
    for (const Conversation& c : corpus.train) {
        if (c.gold != 0) continue;
        for (int id : c.turns.back())
            allowed.push_back(corpus.vocab.tokens[static_cast<std::size_t>(id)]);
    }
    for (const auto& [w, score] : iw.words) {
        CHECK(std::find(allowed.begin(), allowed.end(), w) != allowed.end());
        CHECK(score > 0.0);
    }
}

TEST_CASE_FIXTURE(SynthFixture, "json and heat report render") {
    QuoteRecModel model = tiny_model(corpus.vocab.size(), corpus.quotes.size());
    Rng rng(0);
    const Tensor Q = encode_quotations(model, corpus.quotes, false, rng);
    const IndicativeWords iw = indicative_words(model, Q, corpus, 2, {});

    const std::string js = indicative_words_to_json(iw);
    CHECK(js.find("\"quote_id\":2") != std::string::npos);
    CHECK(js.find(iw.words[0].first) != std::string::npos);

    const std::string heat = heat_report(iw);
    CHECK(heat.find(iw.quote_text) != std::string::npos);
    CHECK(heat.find(iw.words[0].first) != std::string::npos);
}
