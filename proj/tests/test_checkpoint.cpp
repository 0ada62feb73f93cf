#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "quotrec/checkpoint.hpp"

using namespace quotrec;
namespace fs = std::filesystem;

namespace {

struct CheckpointFixture {
    std::string dir;
    Corpus corpus;
    TrainConfig cfg;

    CheckpointFixture() {
        dir = (fs::temp_directory_path() / "quotrec_test_ckpt").string();
        fs::remove_all(dir);
        fs::create_directories(dir);
        SynthParams p;
        p.seed = 21;
        p.n_q = 3;
        p.n_convs = 30;
        synth_corpus(p, dir + "/corpus");
        corpus = load_corpus(dir + "/corpus");

        cfg.model.dim = 16;
        cfg.model.hidden = 10;
        cfg.model.n_layers = 1;
        cfg.model.n_heads = 2;
        cfg.model.d_ff = 32;
        cfg.model.dropout = 0.0;
        cfg.seed = 5;
    }
    ~CheckpointFixture() { fs::remove_all(dir); }

    std::shared_ptr<QuoteRecModel> make_model(std::uint64_t seed) const {
        Rng rng(seed);
        return std::make_shared<QuoteRecModel>(cfg.model, corpus.vocab.size(),
                                               corpus.quotes.size(), rng);
    }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE_FIXTURE(CheckpointFixture, "round trip restores config, vocab, quotes, metrics") {
    const auto model = make_model(5);
    CheckpointMetrics m;
    m.valid_map = 0.75;
    m.valid_p1 = 0.5;
    m.valid_p3 = 0.9;
    m.valid_ndcg5 = 0.8;
    m.best_epoch = 3;
    save_checkpoint(dir + "/ck", *model, cfg, corpus.vocab, corpus.quotes, m);

    const LoadedCheckpoint lc = load_checkpoint(dir + "/ck");
    CHECK(lc.config.model.dim == 16);
    CHECK(lc.config.seed == 5);
    CHECK(lc.vocab.tokens == corpus.vocab.tokens);
    CHECK(lc.quotes.texts == corpus.quotes.texts);
    CHECK(lc.quotes.token_ids == corpus.quotes.token_ids);
    CHECK(lc.metrics.valid_map == 0.75);
    CHECK(lc.metrics.best_epoch == 3);

    // every tensor restored exactly
    REQUIRE(lc.model->params.items.size() == model->params.items.size());
    for (std::size_t i = 0; i < model->params.items.size(); ++i) {
        CHECK(lc.model->params.items[i].name == model->params.items[i].name);
        CHECK(lc.model->params.items[i].tensor.value() ==
              model->params.items[i].tensor.value());
    }
}

TEST_CASE_FIXTURE(CheckpointFixture, "round-trip model yields bit-identical predictions") {
    const auto model = make_model(5);
    save_checkpoint(dir + "/ck", *model, cfg, corpus.vocab, corpus.quotes, {});
    const LoadedCheckpoint lc = load_checkpoint(dir + "/ck");

    Rng r1(0), r2(0);
    const Tensor q1 = encode_quotations(*model, corpus.quotes, false, r1);
    const Tensor q2 = encode_quotations(*lc.model, corpus.quotes, false, r2);
    CHECK(q1.value() == q2.value());

    for (int i = 0; i < 5; ++i) {
        const auto& conv = corpus.test[static_cast<std::size_t>(i) % corpus.test.size()];
        const RankedResult a = predict(*model, conv.turns, q1, 3);
        const RankedResult b = predict(*lc.model, conv.turns, q2, 3);
        CHECK(a.ids == b.ids);
        CHECK(a.probs == b.probs);
    }
}

TEST_CASE_FIXTURE(CheckpointFixture, "same seed writes bit-identical files") {
    save_checkpoint(dir + "/a", *make_model(9), cfg, corpus.vocab, corpus.quotes, {});
    save_checkpoint(dir + "/b", *make_model(9), cfg, corpus.vocab, corpus.quotes, {});
    save_checkpoint(dir + "/c", *make_model(10), cfg, corpus.vocab, corpus.quotes, {});
    CHECK(slurp(dir + "/a") == slurp(dir + "/b"));
    CHECK(slurp(dir + "/a") != slurp(dir + "/c"));
}

TEST_CASE_FIXTURE(CheckpointFixture, "load then save reproduces the file byte for byte") {
    save_checkpoint(dir + "/orig", *make_model(3), cfg, corpus.vocab, corpus.quotes, {});
    const LoadedCheckpoint lc = load_checkpoint(dir + "/orig");
    save_checkpoint(dir + "/again", *lc.model, lc.config, lc.vocab, lc.quotes, lc.metrics);
    CHECK(slurp(dir + "/orig") == slurp(dir + "/again"));
}

TEST_CASE_FIXTURE(CheckpointFixture, "corrupted files are rejected") {
    save_checkpoint(dir + "/ok", *make_model(3), cfg, corpus.vocab, corpus.quotes, {});

    // bad magic
    {
        std::vector<char> bytes = slurp(dir + "/ok");
        bytes[0] = 'X';
        std::ofstream out(dir + "/bad_magic", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/bad_magic"), DataError);

    // truncated payload
    {
        std::vector<char> bytes = slurp(dir + "/ok");
        bytes.resize(bytes.size() - 64);
        std::ofstream out(dir + "/truncated", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/truncated"), DataError);

    CHECK_THROWS_AS(load_checkpoint(dir + "/missing"), DataError);
}

TEST_CASE_FIXTURE(CheckpointFixture, "ablated models restore their ablations") {
    TrainConfig ab = cfg;
    ab.model.use_M = false;
    Rng rng(4);
    QuoteRecModel model(ab.model, corpus.vocab.size(), corpus.quotes.size(), rng);
    save_checkpoint(dir + "/abl", model, ab, corpus.vocab, corpus.quotes, {});
    const LoadedCheckpoint lc = load_checkpoint(dir + "/abl");
    CHECK(!lc.config.model.use_M);
    CHECK(!lc.model->M.defined());
    CHECK(lc.model->params.find("M") == nullptr);
}
