#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "gridpipe/qnetwork.hpp"
#include "support/toy_data.hpp"

using namespace gridpipe;

namespace {

QNetworkConfig reduced_config() {
    QNetworkConfig cfg;
    cfg.catalog_size = 22;
    cfg.embed_dim = 4;
    cfg.lstm_hidden = 8;
    cfg.value_hidden = {16, 8};
    cfg.adv_hidden = {16, 8};
    cfg.n_actions = 3;
    cfg.max_inputs = 2;
    cfg.grid_cells = 6;  // one grid row
    cfg.action_feature_dim = cfg.embed_dim + cfg.max_inputs + kMetaFeatureCount;
    return cfg;
}

StateVector random_state(const QNetworkConfig& cfg, Rng& rng) {
    StateVector s;
    for (int t = 0; t < cfg.grid_cells; ++t) {
        s.grid_primitives.push_back(static_cast<int>(rng.bounded(
                                        static_cast<std::uint64_t>(cfg.catalog_size + 2))) - 1);
    }
    const auto fill = [&rng](std::vector<double>& v, int count) {
        for (int i = 0; i < count; ++i) v.push_back(rng.uniform(-1.0, 1.0));
    };
    fill(s.grid_inputs, cfg.grid_cells * cfg.max_inputs);
    fill(s.pipeline_meta, cfg.pm_dim);
    fill(s.input_meta, cfg.om_dim);
    fill(s.job_vector, cfg.lj_dim);
    fill(s.action_vectors, cfg.n_actions * cfg.action_feature_dim);
    s.action_valid.assign(static_cast<std::size_t>(cfg.n_actions), 1);
    return s;
}

// total loss used by the finite-difference check: a fixed random linear
// functional of Q over a small batch
double probe_loss(const QNetwork& net, const Batch& batch, const Eigen::MatrixXd& coeff) {
    const QNetworkOutput out = net.forward(batch);
    return (out.q.array() * coeff.array()).sum();
}

}  // namespace

TEST_CASE("dueling combination and its identity") {
    const QNetworkConfig cfg = reduced_config();
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        QNetwork net(cfg, static_cast<std::uint64_t>(trial));
        const StateVector s = random_state(cfg, rng);
        const QNetworkOutput out = net.forward_one(s);
        const double mean_a = out.a.row(0).mean();
        for (int j = 0; j < cfg.n_actions; ++j) {
            // Q(s,a) = V + A(s,a) - mean_a' A(s,a')
            CHECK(out.q(0, j) == doctest::Approx(out.v(0) + out.a(0, j) - mean_a).epsilon(1e-12));
        }
        CHECK(out.q.row(0).mean() == doctest::Approx(out.v(0)).epsilon(1e-9));
    }

    // worked example: V = 5, A = [1,2,3] -> Q = [4,5,6]
    const double v = 5.0;
    const std::vector<double> a{1.0, 2.0, 3.0};
    const double mean = 2.0;
    CHECK(v + a[0] - mean == 4.0);
    CHECK(v + a[1] - mean == 5.0);
    CHECK(v + a[2] - mean == 6.0);
}

TEST_CASE("all-zero parameters give V = 0") {
    const QNetworkConfig cfg = reduced_config();
    QNetwork net(cfg, 3);
    net.for_each_tensor([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
    Rng rng(5);
    const QNetworkOutput out = net.forward_one(random_state(cfg, rng));
    CHECK(out.v(0) == 0.0);  // zero gates keep the LSTM cell at zero
    for (int j = 0; j < cfg.n_actions; ++j) CHECK(out.q(0, j) == 0.0);
}

TEST_CASE("backward matches central finite differences per parameter group") {
    const QNetworkConfig cfg = reduced_config();
    Rng rng(7);

    // pick a seed whose pre-activations stay away from the ReLU kinks so a
    // central difference with h = 1e-3 stays on one linear piece
    QNetwork net(cfg, 12);

    const int B = 3;
    std::vector<StateVector> states;
    for (int i = 0; i < B; ++i) states.push_back(random_state(cfg, rng));
    std::vector<const StateVector*> ptrs;
    for (const auto& s : states) ptrs.push_back(&s);
    const Batch batch = Batch::pack(cfg, ptrs);

    Eigen::MatrixXd coeff(B, cfg.n_actions);
    for (int i = 0; i < B; ++i) {
        for (int j = 0; j < cfg.n_actions; ++j) coeff(i, j) = rng.uniform(-1.0, 1.0);
    }

    ForwardCache cache;
    net.forward(batch, cache);
    const Gradients analytic = net.backward(batch, cache, coeff);

    const double h = 1e-3;
    std::vector<std::pair<std::string, double>> group_errors;
    std::size_t tensor_index = 0;
    net.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& param) {
        const Eigen::MatrixXd* grad = nullptr;
        // same enumeration order as the gradients structure
        std::size_t gi = 0;
        Eigen::MatrixXd grad_store;
        const auto visit = [&](const std::string&, const auto& g) {
            if (gi++ == tensor_index) grad_store = g;
        };
        visit("embed", analytic.embed);
        visit("lstm.wx", analytic.lstm.wx);
        visit("lstm.wh", analytic.lstm.wh);
        visit("lstm.b", analytic.lstm.b);
        for (const auto& l : analytic.value) {
            visit("w", l.w);
            visit("b", l.b);
        }
        for (const auto& l : analytic.adv) {
            visit("w", l.w);
            visit("b", l.b);
        }
        grad = &grad_store;

        double num = 0.0, den = 0.0;
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double keep = param.data()[i];
            param.data()[i] = keep + h;
            const double up = probe_loss(net, batch, coeff);
            param.data()[i] = keep - h;
            const double down = probe_loss(net, batch, coeff);
            param.data()[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = grad->data()[i];
            num += (fd - an) * (fd - an);
            den += fd * fd + an * an;
        }
        const double rel = den > 0.0 ? std::sqrt(num / den) : 0.0;
        group_errors.emplace_back(name, rel);
        ++tensor_index;
    });

    for (const auto& [name, rel] : group_errors) {
        INFO("group " << name);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("embedding lookups and sparse updates") {
    const QNetworkConfig cfg = reduced_config();
    QNetwork net(cfg, 9);

    std::vector<double> a(static_cast<std::size_t>(cfg.embed_dim)), b(a);
    net.embed(5, a);
    net.embed(5, b);
    CHECK(a == b);
    net.embed(0, a);   // blank row
    net.embed(-1, b);  // sentinel row
    CHECK(a != b);
    CHECK_THROWS_AS(net.embed(23, a), UsageError);

    // a grid holding only primitives 3 and 7 touches only their rows
    Rng rng(11);
    StateVector s = random_state(cfg, rng);
    for (std::size_t i = 0; i < s.grid_primitives.size(); ++i) {
        s.grid_primitives[i] = i % 2 == 0 ? 3 : 7;
    }
    const Batch batch = Batch::pack_one(cfg, s);
    ForwardCache cache;
    net.forward(batch, cache);
    Eigen::MatrixXd dq = Eigen::MatrixXd::Ones(1, cfg.n_actions);
    const Gradients g = net.backward(batch, cache, dq);

    const Eigen::MatrixXd before = net.embedding_table();
    AdamState opt(net);
    REQUIRE(opt.apply(net, g));
    const Eigen::MatrixXd after = net.embedding_table();
    for (int id = -1; id <= cfg.catalog_size; ++id) {
        const int row = id + 1;
        if (id == 3 || id == 7) {
            CHECK(before.row(row) != after.row(row));
        } else {
            CHECK(before.row(row) == after.row(row));
        }
    }
}

TEST_CASE("optimizer behavior") {
    const QNetworkConfig cfg = reduced_config();
    Rng rng(13);
    const StateVector s = random_state(cfg, rng);
    const Batch batch = Batch::pack_one(cfg, s);

    // zero gradients leave every parameter unchanged
    QNetwork net(cfg, 21);
    ForwardCache cache;
    net.forward(batch, cache);
    const Gradients zero = net.backward(batch, cache, Eigen::MatrixXd::Zero(1, cfg.n_actions));
    std::vector<Eigen::MatrixXd> before;
    net.for_each_tensor([&before](const std::string&, const Eigen::MatrixXd& m) {
        before.push_back(m);
    });
    AdamState opt(net);
    REQUIRE(opt.apply(net, zero));
    std::size_t idx = 0;
    net.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
        CHECK(m == before[idx++]);
    });

    // identical inputs give identical updates
    QNetwork n1(cfg, 22), n2(cfg, 22);
    ForwardCache c1, c2;
    n1.forward(batch, c1);
    n2.forward(batch, c2);
    Eigen::MatrixXd dq = Eigen::MatrixXd::Ones(1, cfg.n_actions);
    const Gradients g1 = n1.backward(batch, c1, dq);
    const Gradients g2 = n2.backward(batch, c2, dq);
    AdamState o1(n1), o2(n2);
    o1.apply(n1, g1);
    o2.apply(n2, g2);
    std::vector<Eigen::MatrixXd> t1;
    n1.for_each_tensor([&t1](const std::string&, const Eigen::MatrixXd& m) { t1.push_back(m); });
    idx = 0;
    n2.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& m) {
        CHECK(m == t1[idx++]);
    });

    // a positive gradient moves the parameter down
    QNetwork n3(cfg, 23);
    ForwardCache c3;
    n3.forward(batch, c3);
    Gradients g3 = n3.backward(batch, c3, Eigen::MatrixXd::Zero(1, cfg.n_actions));
    g3.adv.back().b(0) = 1.0;  // inject a known positive gradient
    double before_b = 0.0;
    n3.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& m) {
        if (name == "adv." + std::to_string(g3.adv.size() - 1) + ".b") before_b = m(0, 0);
    });
    AdamState o3(n3);
    REQUIRE(o3.apply(n3, g3));
    n3.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& m) {
        if (name == "adv." + std::to_string(g3.adv.size() - 1) + ".b") {
            CHECK(m(0, 0) < before_b);
        }
    });
}

TEST_CASE("checkpoint round trip is bit exact") {
    const QNetworkConfig cfg = reduced_config();
    QNetwork net(cfg, 31);
    const auto prefix = (std::filesystem::temp_directory_path() / "gp_ckpt").string();
    save_checkpoint(net, prefix, R"({"note":"unit"})");

    std::string extra;
    const QNetwork back = load_checkpoint(prefix, &extra);
    CHECK(extra.find("unit") != std::string::npos);

    Rng rng(17);
    for (int i = 0; i < 10; ++i) {
        const StateVector s = random_state(cfg, rng);
        const QNetworkOutput a = net.forward_one(s);
        const QNetworkOutput b = back.forward_one(s);
        CHECK(a.q == b.q);
        CHECK(a.v == b.v);
    }

    // catalog hash guard: tamper with the manifest
    {
        std::ifstream in(prefix + ".json");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = text.find("catalog_hash");
        REQUIRE(pos != std::string::npos);
        text.replace(text.find(':', pos) + 2, 1, "9");
        std::ofstream out(prefix + ".json");
        out << text;
    }
    CHECK_THROWS_AS(load_checkpoint(prefix), DataError);
}

TEST_CASE("forward is stateless across calls") {
    const QNetworkConfig cfg = reduced_config();
    QNetwork net(cfg, 37);
    Rng rng(19);
    const StateVector s = random_state(cfg, rng);
    const QNetworkOutput first = net.forward_one(s);
    net.forward_one(random_state(cfg, rng));  // interleave another input
    const QNetworkOutput second = net.forward_one(s);
    CHECK(first.q == second.q);
}
