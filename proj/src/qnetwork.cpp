#include "gridpipe/qnetwork.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace gridpipe {

QNetworkConfig QNetworkConfig::for_environment(const EnvironmentConfig& env, int catalog_size,
                                               int n_actions) {
    QNetworkConfig cfg;
    cfg.catalog_size = catalog_size;
    cfg.embed_dim = env.embed_dim;
    cfg.max_inputs = env.max_inputs;
    cfg.grid_cells = env.grid_cells();
    cfg.n_actions = n_actions;
    cfg.action_feature_dim = env.action_feature_dim();
    cfg.lj_dim = env.job_vector_dim();
    return cfg;
}

std::string QNetworkConfig::to_json() const {
    nlohmann::json j{{"catalog_size", catalog_size},
                     {"embed_dim", embed_dim},
                     {"lstm_hidden", lstm_hidden},
                     {"value_hidden", value_hidden},
                     {"adv_hidden", adv_hidden},
                     {"n_actions", n_actions},
                     {"max_inputs", max_inputs},
                     {"grid_cells", grid_cells},
                     {"pm_dim", pm_dim},
                     {"om_dim", om_dim},
                     {"lj_dim", lj_dim},
                     {"action_feature_dim", action_feature_dim}};
    return j.dump();
}

QNetworkConfig QNetworkConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    QNetworkConfig cfg;
    cfg.catalog_size = j.at("catalog_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    cfg.value_hidden = j.at("value_hidden").get<std::vector<int>>();
    cfg.adv_hidden = j.at("adv_hidden").get<std::vector<int>>();
    cfg.n_actions = j.at("n_actions").get<int>();
    cfg.max_inputs = j.at("max_inputs").get<int>();
    cfg.grid_cells = j.at("grid_cells").get<int>();
    cfg.pm_dim = j.at("pm_dim").get<int>();
    cfg.om_dim = j.at("om_dim").get<int>();
    cfg.lj_dim = j.at("lj_dim").get<int>();
    cfg.action_feature_dim = j.at("action_feature_dim").get<int>();
    return cfg;
}

// ---------------------------------------------------------------------------
// Batch packing
// ---------------------------------------------------------------------------

Batch Batch::pack(const QNetworkConfig& cfg, std::span<const StateVector* const> states) {
    Batch b;
    b.size = static_cast<int>(states.size());
    const int B = b.size;
    b.gp.resize(B, cfg.grid_cells);
    b.gin.resize(B, cfg.grid_cells * cfg.max_inputs);
    b.pm.resize(B, cfg.pm_dim);
    b.om.resize(B, cfg.om_dim);
    b.lj.resize(B, cfg.lj_dim);
    b.ac.resize(B, cfg.n_actions * cfg.action_feature_dim);
    for (int i = 0; i < B; ++i) {
        const StateVector& s = *states[static_cast<std::size_t>(i)];
        if (static_cast<int>(s.grid_primitives.size()) != cfg.grid_cells ||
            static_cast<int>(s.grid_inputs.size()) != cfg.grid_cells * cfg.max_inputs ||
            static_cast<int>(s.pipeline_meta.size()) != cfg.pm_dim ||
            static_cast<int>(s.input_meta.size()) != cfg.om_dim ||
            static_cast<int>(s.job_vector.size()) != cfg.lj_dim ||
            static_cast<int>(s.action_vectors.size()) != cfg.n_actions * cfg.action_feature_dim) {
            throw std::logic_error("batch: state dimensions do not match the network config");
        }
        for (int t = 0; t < cfg.grid_cells; ++t) b.gp(i, t) = s.grid_primitives[static_cast<std::size_t>(t)];
        for (int j = 0; j < b.gin.cols(); ++j) b.gin(i, j) = s.grid_inputs[static_cast<std::size_t>(j)];
        for (int j = 0; j < cfg.pm_dim; ++j) b.pm(i, j) = s.pipeline_meta[static_cast<std::size_t>(j)];
        for (int j = 0; j < cfg.om_dim; ++j) b.om(i, j) = s.input_meta[static_cast<std::size_t>(j)];
        for (int j = 0; j < cfg.lj_dim; ++j) b.lj(i, j) = s.job_vector[static_cast<std::size_t>(j)];
        for (int j = 0; j < b.ac.cols(); ++j) b.ac(i, j) = s.action_vectors[static_cast<std::size_t>(j)];
    }
    return b;
}

Batch Batch::pack_one(const QNetworkConfig& cfg, const StateVector& state) {
    const StateVector* p = &state;
    return pack(cfg, std::span<const StateVector* const>(&p, 1));
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& m) {
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

Eigen::MatrixXd dense_forward(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& input,
                              std::vector<Eigen::MatrixXd>& acts) {
    acts.clear();
    acts.push_back(input);
    Eigen::MatrixXd h = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = (h * layers[l].w.transpose()).rowwise() + layers[l].b.col(0).transpose();
        if (l + 1 < layers.size()) h = h.cwiseMax(0.0);  // rectifier on hidden layers only
        acts.push_back(h);
    }
    return h;
}

// acts[0] = input, acts[l+1] = output of layer l (post-rectifier for hidden).
void dense_backward(const std::vector<DenseLayer>& layers,
                    const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd dout,
                    std::vector<DenseLayer>& grads, Eigen::MatrixXd* dinput) {
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
        if (l + 1 < static_cast<int>(layers.size())) {
            dout = dout.cwiseProduct(
                (acts[static_cast<std::size_t>(l + 1)].array() > 0.0).cast<double>().matrix());
        }
        grads[static_cast<std::size_t>(l)].w += dout.transpose() * acts[static_cast<std::size_t>(l)];
        grads[static_cast<std::size_t>(l)].b += dout.colwise().sum().transpose();
        if (l > 0 || dinput) dout = dout * layers[static_cast<std::size_t>(l)].w;
    }
    if (dinput) *dinput = std::move(dout);
}

std::vector<DenseLayer> make_dense_chain(int in_dim, const std::vector<int>& hidden, int out_dim) {
    std::vector<DenseLayer> layers;
    int d = in_dim;
    for (int h : hidden) {
        layers.push_back(DenseLayer{Eigen::MatrixXd::Zero(h, d), Eigen::MatrixXd::Zero(h, 1)});
        d = h;
    }
    layers.push_back(DenseLayer{Eigen::MatrixXd::Zero(out_dim, d), Eigen::MatrixXd::Zero(out_dim, 1)});
    return layers;
}

template <typename EmbedT, typename LstmT, typename DenseVecT, typename Fn>
void enumerate_tensors(EmbedT& embed, LstmT& lstm, DenseVecT& value, DenseVecT& adv, Fn&& fn) {
    fn("embed", embed);
    fn("lstm.wx", lstm.wx);
    fn("lstm.wh", lstm.wh);
    fn("lstm.b", lstm.b);
    for (std::size_t l = 0; l < value.size(); ++l) {
        fn("value." + std::to_string(l) + ".w", value[l].w);
        fn("value." + std::to_string(l) + ".b", value[l].b);
    }
    for (std::size_t l = 0; l < adv.size(); ++l) {
        fn("adv." + std::to_string(l) + ".w", adv[l].w);
        fn("adv." + std::to_string(l) + ".b", adv[l].b);
    }
}

}  // namespace

QNetwork::QNetwork(QNetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    embed_ = Eigen::MatrixXd::Zero(cfg_.embed_rows(), cfg_.embed_dim);
    const int h4 = 4 * cfg_.lstm_hidden;
    lstm_.wx = Eigen::MatrixXd::Zero(h4, cfg_.cell_input_dim());
    lstm_.wh = Eigen::MatrixXd::Zero(h4, cfg_.lstm_hidden);
    lstm_.b = Eigen::MatrixXd::Zero(h4, 1);
    value_ = make_dense_chain(cfg_.value_dense_in(), cfg_.value_hidden, 1);
    adv_ = make_dense_chain(cfg_.adv_input_dim(), cfg_.adv_hidden, cfg_.n_actions);

    // Uniform fan-in init for weight matrices, zero biases, small uniform
    // embedding rows. Deterministic: tensors filled in enumeration order.
    Rng rng(hash_combine(seed, fnv1a64("qnetwork_init")));
    for (Eigen::Index i = 0; i < embed_.size(); ++i) {
        embed_.data()[i] = rng.uniform(-0.05, 0.05);
    }
    const auto fill_fanin = [&rng](Eigen::MatrixXd& w) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    };
    fill_fanin(lstm_.wx);
    fill_fanin(lstm_.wh);
    for (auto& l : value_) fill_fanin(l.w);
    for (auto& l : adv_) fill_fanin(l.w);
}

void QNetwork::embed(int primitive_id, std::span<double> out) const {
    if (primitive_id < -1 || primitive_id > cfg_.catalog_size) {
        throw UsageError("embed: primitive id out of range");
    }
    if (static_cast<int>(out.size()) != cfg_.embed_dim) {
        throw std::logic_error("embed: output span has wrong size");
    }
    const int row = primitive_id + 1;  // -1 sentinel -> 0, blank -> 1, ids shifted
    for (int j = 0; j < cfg_.embed_dim; ++j) out[static_cast<std::size_t>(j)] = embed_(row, j);
}

Embedder QNetwork::embedder() const {
    return [this](int id, std::span<double> out) { embed(id, out); };
}

QNetworkOutput QNetwork::forward(const Batch& batch, ForwardCache& cc) const {
    const int B = batch.size;
    const int T = cfg_.grid_cells;
    const int H = cfg_.lstm_hidden;
    const int ni = cfg_.max_inputs;
    const int in_dim = cfg_.cell_input_dim();

    cc.x.assign(static_cast<std::size_t>(T), {});
    cc.gi.assign(static_cast<std::size_t>(T), {});
    cc.gf.assign(static_cast<std::size_t>(T), {});
    cc.gg.assign(static_cast<std::size_t>(T), {});
    cc.go.assign(static_cast<std::size_t>(T), {});
    cc.c.assign(static_cast<std::size_t>(T), {});
    cc.tanhc.assign(static_cast<std::size_t>(T), {});
    cc.h.assign(static_cast<std::size_t>(T), {});

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(B, H);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(B, H);
    for (int t = 0; t < T; ++t) {
        Eigen::MatrixXd x(B, in_dim);
        for (int b = 0; b < B; ++b) {
            x.row(b).head(cfg_.embed_dim) = embed_.row(batch.gp(b, t) + 1);
        }
        x.block(0, cfg_.embed_dim, B, ni) = batch.gin.block(0, t * ni, B, ni);
        Eigen::MatrixXd pre = x * lstm_.wx.transpose() + h * lstm_.wh.transpose();
        pre.rowwise() += lstm_.b.col(0).transpose();
        Eigen::MatrixXd gi = sigmoid(pre.leftCols(H));
        Eigen::MatrixXd gf = sigmoid(pre.block(0, H, B, H));
        Eigen::MatrixXd gg = pre.block(0, 2 * H, B, H).array().tanh().matrix();
        Eigen::MatrixXd go = sigmoid(pre.rightCols(H));
        c = gf.cwiseProduct(c) + gi.cwiseProduct(gg);
        Eigen::MatrixXd tc = c.array().tanh().matrix();
        h = go.cwiseProduct(tc);
        cc.x[static_cast<std::size_t>(t)] = std::move(x);
        cc.gi[static_cast<std::size_t>(t)] = std::move(gi);
        cc.gf[static_cast<std::size_t>(t)] = std::move(gf);
        cc.gg[static_cast<std::size_t>(t)] = std::move(gg);
        cc.go[static_cast<std::size_t>(t)] = std::move(go);
        cc.c[static_cast<std::size_t>(t)] = c;
        cc.tanhc[static_cast<std::size_t>(t)] = std::move(tc);
        cc.h[static_cast<std::size_t>(t)] = h;
    }

    cc.zcat.resize(B, cfg_.value_dense_in());
    cc.zcat << h, batch.pm, batch.om, batch.lj;
    Eigen::MatrixXd v_out = dense_forward(value_, cc.zcat, cc.value_act);

    cc.acat.resize(B, cfg_.adv_input_dim());
    if (batch.ac.cols() > 0) {
        cc.acat << batch.pm, batch.om, batch.lj, batch.ac;
    } else {
        cc.acat << batch.pm, batch.om, batch.lj;
    }
    Eigen::MatrixXd a_out = dense_forward(adv_, cc.acat, cc.adv_act);

    QNetworkOutput out;
    out.v = v_out.col(0);
    out.a = std::move(a_out);
    out.q = out.a;
    const Eigen::VectorXd shift = out.v - out.a.rowwise().mean();
    out.q.colwise() += shift;
    return out;
}

QNetworkOutput QNetwork::forward(const Batch& batch) const {
    ForwardCache cc;
    return forward(batch, cc);
}

QNetworkOutput QNetwork::forward_one(const StateVector& state) const {
    return forward(Batch::pack_one(cfg_, state));
}

Eigen::VectorXd QNetwork::advantage_one(const StateVector& state) const {
    Eigen::MatrixXd acat(1, cfg_.adv_input_dim());
    int offset = 0;
    const auto put = [&acat, &offset](const std::vector<double>& v) {
        for (double x : v) acat(0, offset++) = x;
    };
    put(state.pipeline_meta);
    put(state.input_meta);
    put(state.job_vector);
    put(state.action_vectors);
    if (offset != cfg_.adv_input_dim()) {
        throw std::logic_error("advantage_one: state does not match the network config");
    }
    std::vector<Eigen::MatrixXd> acts;
    return dense_forward(adv_, acat, acts).row(0);
}

Gradients QNetwork::backward(const Batch& batch, const ForwardCache& cc,
                             const Eigen::MatrixXd& dq) const {
    const int B = batch.size;
    const int T = cfg_.grid_cells;
    const int H = cfg_.lstm_hidden;

    Gradients g;
    g.embed = Eigen::MatrixXd::Zero(embed_.rows(), embed_.cols());
    g.lstm.wx = Eigen::MatrixXd::Zero(lstm_.wx.rows(), lstm_.wx.cols());
    g.lstm.wh = Eigen::MatrixXd::Zero(lstm_.wh.rows(), lstm_.wh.cols());
    g.lstm.b = Eigen::MatrixXd::Zero(lstm_.b.rows(), 1);
    for (const auto& l : value_) {
        g.value.push_back(DenseLayer{Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                                     Eigen::MatrixXd::Zero(l.b.rows(), 1)});
    }
    for (const auto& l : adv_) {
        g.adv.push_back(DenseLayer{Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()),
                                   Eigen::MatrixXd::Zero(l.b.rows(), 1)});
    }
    g.embed_rows_touched.assign(static_cast<std::size_t>(embed_.rows()), 0);

    // Dueling head: dV = sum_a dQ_a; dA_a = dQ_a - mean_a' dQ_a'.
    const Eigen::VectorXd dv = dq.rowwise().sum();
    Eigen::MatrixXd da = dq;
    da.colwise() -= dq.rowwise().mean().eval();

    dense_backward(adv_, cc.adv_act, da, g.adv, nullptr);  // A_c input gets no gradient

    Eigen::MatrixXd dz;
    dense_backward(value_, cc.value_act, dv, g.value, &dz);

    Eigen::MatrixXd dh = dz.leftCols(H);
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(B, H);
    for (int t = T - 1; t >= 0; --t) {
        const Eigen::MatrixXd& gi = cc.gi[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd& gf = cc.gf[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd& gg = cc.gg[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd& go = cc.go[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd& tc = cc.tanhc[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd c_prev =
            t > 0 ? cc.c[static_cast<std::size_t>(t - 1)] : Eigen::MatrixXd::Zero(B, H);

        const Eigen::MatrixXd dgo = dh.cwiseProduct(tc);
        dc += dh.cwiseProduct(go).cwiseProduct(
            (1.0 - tc.array().square()).matrix());
        const Eigen::MatrixXd dgi = dc.cwiseProduct(gg);
        const Eigen::MatrixXd dgg = dc.cwiseProduct(gi);
        const Eigen::MatrixXd dgf = dc.cwiseProduct(c_prev);
        dc = dc.cwiseProduct(gf);

        Eigen::MatrixXd dpre(B, 4 * H);
        dpre.leftCols(H) = dgi.cwiseProduct(gi).cwiseProduct((1.0 - gi.array()).matrix());
        dpre.block(0, H, B, H) = dgf.cwiseProduct(gf).cwiseProduct((1.0 - gf.array()).matrix());
        dpre.block(0, 2 * H, B, H) = dgg.cwiseProduct((1.0 - gg.array().square()).matrix());
        dpre.rightCols(H) = dgo.cwiseProduct(go).cwiseProduct((1.0 - go.array()).matrix());

        g.lstm.wx += dpre.transpose() * cc.x[static_cast<std::size_t>(t)];
        if (t > 0) g.lstm.wh += dpre.transpose() * cc.h[static_cast<std::size_t>(t - 1)];
        g.lstm.b += dpre.colwise().sum().transpose();

        const Eigen::MatrixXd dx = dpre * lstm_.wx;
        dh = dpre * lstm_.wh;
        for (int b = 0; b < B; ++b) {
            const int row = batch.gp(b, t) + 1;
            g.embed.row(row) += dx.row(b).head(cfg_.embed_dim);
            g.embed_rows_touched[static_cast<std::size_t>(row)] = 1;
        }
    }
    return g;
}

bool Gradients::all_finite() const {
    bool ok = true;
    const auto check = [&ok](const std::string&, const auto& m) { ok = ok && m.allFinite(); };
    enumerate_tensors(embed, lstm, const_cast<std::vector<DenseLayer>&>(value),
                      const_cast<std::vector<DenseLayer>&>(adv),
                      [&](const std::string& n, const auto& m) { check(n, m); });
    return ok;
}

void QNetwork::for_each_tensor(
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
    enumerate_tensors(embed_, lstm_, value_, adv_,
                      [&fn](const std::string& n, Eigen::MatrixXd& m) { fn(n, m); });
}

void QNetwork::for_each_tensor(
    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const {
    enumerate_tensors(const_cast<Eigen::MatrixXd&>(embed_), const_cast<LstmLayer&>(lstm_),
                      const_cast<std::vector<DenseLayer>&>(value_),
                      const_cast<std::vector<DenseLayer>&>(adv_),
                      [&fn](const std::string& n, const Eigen::MatrixXd& m) { fn(n, m); });
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamState::AdamState(const QNetwork& net, double alpha_in) {
    alpha = alpha_in;
    net.for_each_tensor([this](const std::string&, const Eigen::MatrixXd& m) {
        m_.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    });
}

bool AdamState::apply(QNetwork& net, const Gradients& g) {
    if (!g.all_finite()) return false;
    ++step;
    const double alpha_t =
        alpha * std::sqrt(1.0 - std::pow(beta2, static_cast<double>(step))) /
        (1.0 - std::pow(beta1, static_cast<double>(step)));

    std::vector<const Eigen::MatrixXd*> grads;
    enumerate_tensors(const_cast<Eigen::MatrixXd&>(g.embed), const_cast<LstmLayer&>(g.lstm),
                      const_cast<std::vector<DenseLayer>&>(g.value),
                      const_cast<std::vector<DenseLayer>&>(g.adv),
                      [&grads](const std::string&, const Eigen::MatrixXd& m) {
                          grads.push_back(&m);
                      });

    std::size_t idx = 0;
    net.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& param) {
        const Eigen::MatrixXd& grad = *grads[idx];
        Eigen::MatrixXd& m = m_[idx];
        Eigen::MatrixXd& v = v_[idx];
        if (name == "embed") {
            // Sparse handling: rows without gradient this step keep their
            // moments and parameters untouched.
            for (Eigen::Index r = 0; r < param.rows(); ++r) {
                if (!g.embed_rows_touched[static_cast<std::size_t>(r)]) continue;
                m.row(r) = beta1 * m.row(r) + (1.0 - beta1) * grad.row(r);
                v.row(r) = beta2 * v.row(r).array().matrix() +
                           (1.0 - beta2) * grad.row(r).array().square().matrix();
                param.row(r) -=
                    alpha_t * (m.row(r).array() / (v.row(r).array().sqrt() + eps)).matrix();
            }
        } else {
            m = beta1 * m + (1.0 - beta1) * grad;
            v = (beta2 * v.array() + (1.0 - beta2) * grad.array().square()).matrix();
            param -= (alpha_t * m.array() / (v.array().sqrt() + eps)).matrix();
        }
        ++idx;
    });
    return true;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const QNetwork& net, const std::string& prefix,
                     const std::string& extra_json) {
    nlohmann::json tensors = nlohmann::json::array();
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("checkpoint: cannot write '" + prefix + ".bin'");
    std::uint64_t offset = 0;
    net.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& m) {
        tensors.push_back({{"name", name},
                           {"rows", m.rows()},
                           {"cols", m.cols()},
                           {"offset", offset}});
        bin.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
        offset += sizeof(double) * static_cast<std::uint64_t>(m.size());
    });
    if (!bin) throw DataError("checkpoint: write failed for '" + prefix + ".bin'");
    bin.close();

    nlohmann::json manifest{
        {"format", "gridpipe-checkpoint-v1"},
        {"catalog_hash", catalog_hash()},
        {"network", nlohmann::json::parse(net.config().to_json())},
        {"tensors", tensors},
        {"extra", nlohmann::json::parse(extra_json)}};
    std::ofstream out(prefix + ".json");
    if (!out) throw DataError("checkpoint: cannot write '" + prefix + ".json'");
    out << manifest.dump(2) << "\n";
}

QNetwork load_checkpoint(const std::string& prefix, std::string* extra_json_out) {
    std::ifstream in(prefix + ".json");
    if (!in) throw DataError("checkpoint: cannot open '" + prefix + ".json'");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "gridpipe-checkpoint-v1") {
        throw DataError("checkpoint: unknown format");
    }
    if (manifest.at("catalog_hash").get<std::uint64_t>() != catalog_hash()) {
        throw DataError("checkpoint: primitive catalog does not match this build");
    }
    QNetwork net(QNetworkConfig::from_json(manifest.at("network").dump()), 0);

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw DataError("checkpoint: cannot open '" + prefix + ".bin'");
    std::size_t idx = 0;
    const auto& tensors = manifest.at("tensors");
    net.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& m) {
        const auto& t = tensors.at(idx++);
        if (t.at("name").get<std::string>() != name ||
            t.at("rows").get<Eigen::Index>() != m.rows() ||
            t.at("cols").get<Eigen::Index>() != m.cols()) {
            throw DataError("checkpoint: tensor layout mismatch at '" + name + "'");
        }
        bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        bin.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
        if (!bin) throw DataError("checkpoint: truncated binary at '" + name + "'");
    });
    if (extra_json_out) *extra_json_out = manifest.value("extra", nlohmann::json::object()).dump();
    return net;
}

}  // namespace gridpipe
