#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "quotrec/training.hpp"

using namespace quotrec;
namespace fs = std::filesystem;

namespace {

// small corpus the optimizer can actually fit in a couple of epochs
struct SynthFixture {
    std::string dir;
    SynthFixture() {
        dir = (fs::temp_directory_path() / "quotrec_test_train").string();
        fs::remove_all(dir);
        SynthParams p;
        p.seed = 3;
        p.n_q = 4;
        p.n_convs = 60;
        p.noise = 0.1;
        synth_corpus(p, dir);
    }
    ~SynthFixture() { fs::remove_all(dir); }
};

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.model.dim = 32;
    cfg.model.hidden = 24;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 64;
    cfg.model.dropout = 0.1;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.max_epochs = 6;
    cfg.patience = 6;
    cfg.seed = 9;
    return cfg;
}

} // namespace

TEST_CASE("adam reproduces the scalar reference update") {
    // single parameter w = 0 with constant gradient 1: after one step,
    // m_hat = 1, v_hat = 1, delta = lr * 1 / (1 + eps)
    ParamRegistry reg;
    Tensor w = Tensor::from({1}, {0.0});
    reg.add("w", w, Decay::none);
    w.grad()[0] = 1.0;

    Adam opt;
    opt.step(reg, 0.1);
    CHECK(opt.step_count() == 1);
    const double expect1 = -0.1 * 1.0 / (1.0 + 1e-8);
    CHECK(w.value()[0] == doctest::Approx(expect1).epsilon(1e-12));
    CHECK(w.grad()[0] == 0.0); // grads zeroed by the step

    // second step with the same gradient, hand-rolled recurrence
    w.grad()[0] = 1.0;
    opt.step(reg, 0.1);
    const double m2 = 0.9 * 0.1 + 0.1 * 1.0;       // m after two grads of 1
    const double v2 = 0.999 * 0.001 + 0.001 * 1.0;
    const double mhat = m2 / (1.0 - 0.9 * 0.9);
    const double vhat = v2 / (1.0 - 0.999 * 0.999);
    const double expect2 = expect1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(w.value()[0] == doctest::Approx(expect2).epsilon(1e-10));
}

TEST_CASE("adam aborts on NaN gradients naming the parameter") {
    ParamRegistry reg;
    Tensor w = Tensor::from({2}, {0.0, 0.0});
    reg.add("bad_param", w, Decay::none);
    w.grad()[1] = std::nan("");
    Adam opt;
    CHECK_THROWS_WITH_AS(opt.step(reg, 0.1), doctest::Contains("bad_param"),
                         TrainingDiverged);
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
    ParamRegistry reg;
    Tensor a = Tensor::from({2}, {0.0, 0.0});
    Tensor b = Tensor::from({1}, {0.0});
    reg.add("a", a, Decay::none);
    reg.add("b", b, Decay::none);
    a.grad() = {3.0, 0.0};
    b.grad() = {4.0}; // global norm 5

    clip_gradients(reg, 1.0);
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(b.grad()[0] == doctest::Approx(0.8).epsilon(1e-12));

    // already small: untouched
    a.grad() = {0.3, 0.0};
    b.grad() = {0.4};
    clip_gradients(reg, 1.0);
    CHECK(a.grad()[0] == 0.3);
    CHECK(b.grad()[0] == 0.4);
}

TEST_CASE("train config json round trip and validation") {
    TrainConfig cfg = small_config();
    cfg.lambda = 1e-4;
    cfg.model.turn_encoder = TurnEncoderKind::bigru;
    const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.lr == cfg.lr);
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.seed == cfg.seed);
    CHECK(back.model.dim == cfg.model.dim);
    CHECK(back.model.turn_encoder == TurnEncoderKind::bigru);

    // partial json keeps defaults for unmentioned fields
    const TrainConfig partial = train_config_from_json("{\"lr\": 0.5}");
    CHECK(partial.lr == 0.5);
    CHECK(partial.batch_size == 32);
    CHECK(partial.model.dim == 200);

    CHECK_THROWS_AS(train_config_from_json("{\"lr\": -1.0}"), ConfigError);
    CHECK_THROWS_AS(train_config_from_json("{\"batch_size\": 0}"), ConfigError);
    CHECK_THROWS_AS(train_config_from_json("{\"model\": {\"dim\": -5}}"), ConfigError);
    CHECK_THROWS_AS(train_config_from_json("not json"), ConfigError);
    // lr 0 is a legal (if useless) configuration
    CHECK_NOTHROW(train_config_from_json("{\"lr\": 0.0}"));
}

TEST_CASE_FIXTURE(SynthFixture, "training reduces loss and improves validation MAP") {
    const Corpus corpus = load_corpus(dir);
    std::ostringstream log;
    const TrainResult r = train(small_config(), corpus, &log);

    REQUIRE(!r.log.empty());
    CHECK(r.log.front().epoch == 1);
    CHECK(r.log.back().total < r.log.front().total);
    CHECK(r.best_valid_map > 0.5); // tiny corpus, separable topics
    CHECK(r.best_epoch >= 1);

    // log stream carries one json object per epoch
    int lines = 0;
    std::string line;
    std::istringstream in(log.str());
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == static_cast<int>(r.log.size()));

    // the returned model evaluates to the reported best MAP on valid
    const EvalReport ev = evaluate_model(*r.model, corpus.valid, corpus.quotes);
    CHECK(ev.map == doctest::Approx(r.best_valid_map).epsilon(1e-12));
}

TEST_CASE_FIXTURE(SynthFixture, "same seed gives identical training, different seed differs") {
    const Corpus corpus = load_corpus(dir);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 2;
    const TrainResult a = train(cfg, corpus);
    const TrainResult b = train(cfg, corpus);
    cfg.seed = 10;
    const TrainResult c = train(cfg, corpus);

    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].total == b.log[i].total); // bit-identical trajectories
        CHECK(a.log[i].valid_map == b.log[i].valid_map);
    }
    CHECK(a.log[0].total != c.log[0].total);
}

TEST_CASE_FIXTURE(SynthFixture, "patience zero stops after the first non-improving epoch") {
    const Corpus corpus = load_corpus(dir);
    TrainConfig cfg = small_config();
    cfg.lr = 0.0; // nothing can improve
    cfg.max_epochs = 10;
    cfg.patience = 0;
    const TrainResult r = train(cfg, corpus);
    CHECK(r.log.size() == 2); // epoch 1 sets the best, epoch 2 fails to beat it
    CHECK(r.best_epoch == 1);
}

TEST_CASE_FIXTURE(SynthFixture, "mapping distance and ablation plumbing") {
    const Corpus corpus = load_corpus(dir);
    TrainConfig cfg = small_config();
    cfg.max_epochs = 2;
    const TrainResult full = train(cfg, corpus);
    const double d = mean_mapping_distance(*full.model, corpus.test, corpus.quotes);
    CHECK(d > 0.0);
    CHECK(std::isfinite(d));

    TrainConfig no_m = cfg;
    no_m.model.use_M = false;
    const TrainResult ablated = train(no_m, corpus);
    CHECK(ablated.model->params.find("M") == nullptr);

    TrainConfig no_map = cfg;
    no_map.model.use_map_loss = false;
    const TrainResult r = train(no_map, corpus);
    for (const EpochLog& e : r.log) CHECK(e.map_loss == 0.0);
}

TEST_CASE_FIXTURE(SynthFixture, "grid search picks the best cell deterministically") {
    const Corpus corpus = load_corpus(dir);
    TrainConfig good = small_config();
    good.max_epochs = 8;
    good.patience = 8;
    TrainConfig frozen = good;
    frozen.lr = 0.0; // learns nothing, must lose to the real config
    frozen.max_epochs = 2;
    TrainConfig broken = good;
    broken.model.n_layers = -1; // fails at model construction

    const GridResult g = grid_search({frozen, good, broken}, corpus);
    REQUIRE(g.cells.size() == 3);
    CHECK(g.best_index == 1);
    CHECK(g.best_model != nullptr);
    CHECK(!g.cells[0].failed);
    CHECK(!g.cells[1].failed);
    CHECK(g.cells[2].failed);
    CHECK(!g.cells[2].error.empty());
    CHECK(g.cells[1].valid_map >= g.cells[0].valid_map);
}
