#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "lksde/training.hpp"
#include "support.hpp"

using namespace lksde;
using ad::Graph;
using ad::Tensor;

namespace {

training::TrainConfig small_config() {
    training::TrainConfig c;
    c.T = 5;
    c.k = 6;
    c.batch_size = 4;
    c.feature_width = 8;
    c.hidden = 8;
    c.controller_hidden = 6;
    c.lane_points = 3;
    c.epochs = 2;
    return c;
}

std::vector<data::Scenario> make_data(data::Family kind, std::size_t n, std::uint64_t seed, const training::TrainConfig& c,
                                      double noise = 0.05) {
    auto fam = data::default_family(kind);
    fam.history_steps = c.k;
    fam.horizon = c.T;
    fam.noise_level = noise;
    return data::generate_scenarios(fam, n, seed);
}

std::vector<const data::Scenario*> pointers(const std::vector<data::Scenario>& s) {
    std::vector<const data::Scenario*> out;
    for (const auto& x : s) out.push_back(&x);
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lksde_training_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Squared gradient norm per parameter group after a backward of `root`.
std::map<std::string, double> group_norms(nets::Model& m, Graph& g, ad::Var root) {
    m.params().zero_grad();
    g.backward(root);
    std::map<std::string, double> out;
    for (const char* group : nets::kParameterGroups) {
        double s = 0.0;
        for (const auto* p : m.params().group(group)) {
            for (double v : p->grad.data()) s += v * v;
        }
        out[group] = s;
    }
    return out;
}

}  // namespace

TEST_CASE("smooth l1") {
    CHECK(training::smooth_l1(Trajectory{{1, 2}, {3, 4}}, Trajectory{{1, 2}, {3, 4}}) == 0.0);
    CHECK(training::smooth_l1(Trajectory{{0.5, 0.0}}, Trajectory{{0.0, 0.0}}) == 0.0625);
    CHECK(training::smooth_l1(Trajectory{{2.0, 0.0}}, Trajectory{{0.0, 0.0}}) == 0.75);
    CHECK_THROWS(training::smooth_l1(Trajectory{{0, 0}}, Trajectory{{0, 0}, {1, 1}}));

    Graph g;
    auto one = [&](double e) {
        return training::smooth_l1(g, g.constant(Tensor::matrix(1, 1, {e})), Tensor::matrix(1, 1, {0.0})).value().item();
    };
    CHECK(one(0.5) == 0.125);
    CHECK(one(2.0) == 1.5);
    CHECK(one(-2.0) == 1.5);
    CHECK(one(1.0) == 0.5);

    // Continuous with a continuous first derivative at |e| = 1.
    CHECK(std::abs(one(1.0 - 1e-9) - one(1.0 + 1e-9)) < 1e-8);
    ad::ParameterStore store;
    auto& p = store.add("e", Tensor::matrix(1, 1, {1.0 - 1e-9}));
    auto slope = [&](double e) {
        p.value[0] = e;
        p.zero_grad();
        Graph gg;
        gg.backward(training::smooth_l1(gg, gg.param(p), Tensor::matrix(1, 1, {0.0})));
        return p.grad[0];
    };
    CHECK(std::abs(slope(1.0 - 1e-9) - slope(1.0 + 1e-9)) < 1e-8);
}

TEST_CASE("loss identity and gradient routing") {
    const auto cfg = small_config();
    nets::Model m(cfg.network());
    const auto data = make_data(data::Family::lane_change, 4, 3, cfg);
    const auto batch = pointers(data);
    const auto noise = nets::BatchNoise::sampled(4, cfg.T, 5);

    Graph g;
    const training::LossWeights w{0.3, 0.7};
    const auto l = training::compute_losses(g, m, batch, noise, w);
    const double expect = l.l_pred.value().item() + 0.3 * l.l_reg.value().item() + 0.7 * l.l_kin.value().item();
    CHECK(l.total.value().item() == doctest::Approx(expect).epsilon(1e-15));
    CHECK(l.l_kin.value().item() > 0.0);

    SUBCASE("l_reg reaches extractor and e_s only") {
        const auto n = group_norms(m, g, l.l_reg);
        for (const auto& [group, norm] : n) {
            INFO(group);
            CHECK((norm > 0.0) == (group == "extractor" || group == "e_s"));
        }
    }
    SUBCASE("l_kin reaches f_drift and g_diff only") {
        const auto n = group_norms(m, g, l.l_kin);
        for (const auto& [group, norm] : n) {
            INFO(group);
            CHECK((norm > 0.0) == (group == "f_drift" || group == "g_diff"));
        }
    }
    SUBCASE("l_pred reaches every group") {
        const auto n = group_norms(m, g, l.l_pred);
        for (const auto& [group, norm] : n) {
            INFO(group);
            CHECK(norm > 0.0);
        }
    }
    SUBCASE("rollout-anchored l_kin keeps the same routing") {
        Graph g2;
        const auto own = training::compute_losses(g2, m, batch, noise, {0.1, 1.0, training::KinAnchor::own_rollout});
        const auto n = group_norms(m, g2, own.l_kin);
        for (const auto& [group, norm] : n) {
            INFO(group);
            CHECK((norm > 0.0) == (group == "f_drift" || group == "g_diff"));
        }
    }
}

TEST_CASE("train_step") {
    auto cfg = small_config();
    const auto data = make_data(data::Family::left_turn, 8, 4, cfg);
    const auto batch = pointers(data);

    SUBCASE("identical runs give identical reports") {
        std::vector<double> a, b;
        for (auto* out : {&a, &b}) {
            nets::Model m(cfg.network());
            training::Trainer t(m, cfg);
            for (std::uint64_t s = 0; s < 5; ++s) {
                const auto r = t.train_step(batch, s);
                out->insert(out->end(), {r.l_reg, r.l_kin, r.l_pred, r.total});
            }
        }
        CHECK(a == b);
    }
    SUBCASE("zero weights leave only the prediction loss") {
        cfg.lambda_kin = 0.0;
        cfg.lambda_reg = 0.0;
        nets::Model m(cfg.network());
        training::Trainer t(m, cfg);
        const auto r = t.train_step(batch, 1);
        CHECK(r.total == r.l_pred);
        CHECK(r.l_kin > 0.0);
    }
    SUBCASE("report satisfies the weighted sum") {
        nets::Model m(cfg.network());
        training::Trainer t(m, cfg);
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto r = t.train_step(batch, s);
            CHECK(r.total == doctest::Approx(r.l_pred + cfg.lambda_reg * r.l_reg + cfg.lambda_kin * r.l_kin)
                                 .epsilon(1e-15));
        }
    }
    SUBCASE("non-finite loss aborts without touching parameters") {
        nets::Model m(cfg.network());
        m.params().get("decoder.skip.weight").value.fill(std::numeric_limits<double>::quiet_NaN());
        const Tensor before = m.params().get("f_drift.layer0.weight").value;
        training::Trainer t(m, cfg);
        CHECK_THROWS_AS(t.train_step(batch, 0), training::TrainingError);
        CHECK(m.params().get("f_drift.layer0.weight").value == before);
    }
    SUBCASE("empty batch") {
        nets::Model m(cfg.network());
        training::Trainer t(m, cfg);
        CHECK_THROWS_AS(t.train_step({}, 0), training::TrainingError);
    }
}

TEST_CASE("prediction loss falls below 10% on a straight-line set within 500 steps") {
    auto cfg = small_config();
    cfg.T = 30;
    cfg.k = 20;
    cfg.batch_size = 10;
    cfg.hidden = 16;
    cfg.feature_width = 16;
    cfg.optimizer = training::OptimizerKind::adam;
    cfg.learning_rate = 3e-3;
    const auto data = make_data(data::Family::straight, 50, 21, cfg, 0.0);
    const auto all = pointers(data);
    nets::Model m(cfg.network());
    // Zero-noise evaluation on the whole set, so both ends use one protocol.
    auto l_pred = [&] {
        Graph g;
        return training::compute_losses(g, m, all, nets::BatchNoise::zero(all.size(), cfg.T), {}).l_pred.value().item();
    };
    const double initial = l_pred();
    training::Trainer t(m, cfg);
    for (std::size_t step = 0; step < 500; ++step) {
        const std::size_t start = (step * cfg.batch_size) % all.size();
        t.train_step(std::span<const data::Scenario* const>(all.data() + start, cfg.batch_size), step);
    }
    const double final = l_pred();
    INFO("initial " << initial << " final " << final);
    CHECK(final < 0.1 * initial);
}

TEST_CASE("median prediction loss falls on every family") {
    auto cfg = small_config();
    cfg.T = 30;
    cfg.k = 20;
    cfg.batch_size = 8;
    cfg.hidden = 16;
    cfg.feature_width = 16;
    cfg.optimizer = training::OptimizerKind::adam;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 10;
    for (auto family : data::kAllFamilies) {
        const auto data = make_data(family, 40, 31, cfg);
        nets::Model m(cfg.network());
        const auto result = training::train(m, data, {}, cfg);
        const std::size_t tenth = result.history.size() / 10;
        std::vector<double> head, tail;
        for (std::size_t i = 0; i < tenth; ++i) {
            head.push_back(result.history[i].l_pred);
            tail.push_back(result.history[result.history.size() - 1 - i].l_pred);
        }
        INFO(data::to_string(family) << " first " << median(head) << " last " << median(tail));
        CHECK(median(tail) < median(head));
    }
}

TEST_CASE("train outputs") {
    auto cfg = small_config();
    const auto data = make_data(data::Family::stop_and_go, 10, 2, cfg);
    const std::span<const data::Scenario> train_set(data.data(), 7);
    const std::span<const data::Scenario> val_set(data.data() + 7, 3);

    SUBCASE("zero epochs writes the initial weights") {
        cfg.epochs = 0;
        const auto dir = scratch_dir("zero");
        nets::Model m(cfg.network());
        const training::TrainOutputs out{dir};
        const auto r = training::train(m, train_set, val_set, cfg, &out);
        CHECK(r.history.empty());
        CHECK(r.best_epoch == 0);
        const auto saved = training::load_model(dir / "model.json");
        const nets::Model fresh(cfg.network());
        for (const auto* p : fresh.params().all()) CHECK(saved.params().get(p->name).value == p->value);
        CHECK(slurp(dir / "loss_history.csv") == std::string(training::kLossCsvHeader) + "\n");
    }
    SUBCASE("history has one row per batch") {
        cfg.epochs = 3;
        const auto dir = scratch_dir("rows");
        nets::Model m(cfg.network());
        const training::TrainOutputs out{dir, true};
        const auto r = training::train(m, train_set, val_set, cfg, &out);
        const std::size_t batches = (7 + cfg.batch_size - 1) / cfg.batch_size;
        CHECK(r.history.size() == 3 * batches);
        CHECK(r.val_ade.size() == 3);
        CHECK(std::filesystem::exists(dir / "epoch_001.json"));
        CHECK(std::filesystem::exists(dir / "epoch_003.json"));
        CHECK(std::filesystem::exists(dir / "last.json"));
        std::ifstream csv(dir / "loss_history.csv");
        std::string line;
        std::size_t lines = 0;
        std::getline(csv, line);
        CHECK(line == training::kLossCsvHeader);
        while (std::getline(csv, line)) ++lines;
        CHECK(lines == 3 * batches);
        // The returned model holds the selected epoch's weights.
        const auto best = training::load_model(dir / "model.json");
        for (const auto* p : m.params().all()) CHECK(best.params().get(p->name).value == p->value);
        const double best_ade = training::mean_ade(m, val_set);
        CHECK(best_ade == r.best_val_ade);
        for (double v : r.val_ade) CHECK(best_ade <= v);
    }
    SUBCASE("empty training set") {
        nets::Model m(cfg.network());
        CHECK_THROWS_AS(training::train(m, {}, val_set, cfg), training::TrainingError);
    }
    SUBCASE("runs are reproducible") {
        nets::Model a(cfg.network()), b(cfg.network());
        const auto ra = training::train(a, train_set, val_set, cfg);
        const auto rb = training::train(b, train_set, val_set, cfg);
        REQUIRE(ra.history.size() == rb.history.size());
        for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].total == rb.history[i].total);
    }
}

TEST_CASE("checkpoint round trip gives bit-identical forward outputs") {
    auto cfg = small_config();
    const auto data = make_data(data::Family::right_turn, 6, 9, cfg);
    nets::Model m(cfg.network());
    training::train(m, data, {}, cfg);
    const auto dir = scratch_dir("roundtrip");
    training::save_model(dir / "m.json", m);
    const auto loaded = training::load_model(dir / "m.json");
    CHECK(loaded.config().to_json() == m.config().to_json());

    const auto noise = nets::BatchNoise::sampled(6, cfg.T, 77);
    Graph g1, g2;
    const auto a = nets::forward(g1, m, pointers(data), noise, true);
    const auto b = nets::forward(g2, loaded, pointers(data), noise, true);
    CHECK(a.decoded_lk.value() == b.decoded_lk.value());
    CHECK(a.decoded_bike.value() == b.decoded_bike.value());

    training::save_model(dir / "again.json", loaded);
    CHECK(slurp(dir / "m.json") == slurp(dir / "again.json"));
}

TEST_CASE("train config") {
    const training::TrainConfig d;
    CHECK(d.T == 30);
    CHECK(d.k == 20);
    CHECK(static_cast<double>(d.T) * d.bicycle.delta == doctest::Approx(3.0));
    CHECK(static_cast<double>(d.k) * d.bicycle.delta == doctest::Approx(2.0));
    CHECK(d.lambda_reg == 0.1);
    CHECK(d.lambda_kin == 1.0);
    CHECK(d.learning_rate == 1e-3);
    CHECK(d.batch_size == 32);

    std::istringstream text(
        "# benchmark\n"
        "T = 12\n"
        "lambda_kin = 0.25   # trailing comment\n"
        "optimizer = adam\n"
        "split = 0.8, 0.1, 0.1\n"
        "l_f = 1.2\n");
    const auto c = training::TrainConfig::parse(text);
    CHECK(c.T == 12);
    CHECK(c.lambda_kin == 0.25);
    CHECK(c.optimizer == training::OptimizerKind::adam);
    CHECK(c.split == std::array<double, 3>{0.8, 0.1, 0.1});
    CHECK(c.bicycle.l_f == 1.2);
    CHECK(c.k == 20);

    std::istringstream round(c.to_text());
    CHECK(training::TrainConfig::parse(round).to_json() == c.to_json());
    CHECK(training::TrainConfig::from_json(c.to_json()).to_json() == c.to_json());

    auto rejects = [](const std::string& s) {
        std::istringstream in(s);
        CHECK_THROWS_AS(training::TrainConfig::parse(in), training::ConfigError);
    };
    rejects("bogus = 1\n");
    rejects("T = -3\n");
    rejects("T = abc\n");
    rejects("learning_rate = 0\n");
    rejects("split = 0.5, 0.5, 0.5\n");
    rejects("optimizer = rmsprop\n");
    rejects("T 30\n");
    CHECK_THROWS_AS(training::TrainConfig::load("/nonexistent/lksde.cfg"), training::ConfigError);
}
