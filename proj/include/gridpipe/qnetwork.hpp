#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridpipe/environment.hpp"

namespace gridpipe {

/// Network dimensions. The value stream embeds each grid cell's primitive,
/// concatenates the cell's normalized input refs, runs the 6N-cell sequence
/// through an LSTM and a dense stack to the scalar V. The advantage stream
/// is a dense stack over (P_m | O_m | L_j | A_c) ending in one output per
/// action slot. action_feature_dim = 0 switches to flat mode, where actions
/// are identified by index alone.
struct QNetworkConfig {
    int catalog_size = 22;
    int embed_dim = 15;
    int lstm_hidden = 80;
    std::vector<int> value_hidden{256, 128, 32};
    std::vector<int> adv_hidden{256, 128, 64, 32};
    int n_actions = 6;
    int max_inputs = 3;
    int grid_cells = 18;
    int pm_dim = kPipelineMetaCount;
    int om_dim = kMetaFeatureCount;
    int lj_dim = kTaskCount + kMetricCount + kMetaFeatureCount;
    int action_feature_dim = 30;

    // Embedding rows: sentinel (unvisited, id -1), blank (id 0), catalog ids.
    int embed_rows() const { return catalog_size + 2; }
    int cell_input_dim() const { return embed_dim + max_inputs; }
    int value_dense_in() const { return lstm_hidden + pm_dim + om_dim + lj_dim; }
    int adv_input_dim() const {
        return pm_dim + om_dim + lj_dim + n_actions * action_feature_dim;
    }

    static QNetworkConfig for_environment(const EnvironmentConfig& env, int catalog_size,
                                          int n_actions);
    std::string to_json() const;
    static QNetworkConfig from_json(const std::string& text);
};

struct DenseLayer {
    Eigen::MatrixXd w;  // out x in
    Eigen::MatrixXd b;  // out x 1 (kept as a matrix so tensor iteration can
                        // hand out real references)
};

struct LstmLayer {
    Eigen::MatrixXd wx;  // 4H x in, gate order [i f g o]
    Eigen::MatrixXd wh;  // 4H x H
    Eigen::MatrixXd b;   // 4H x 1
};

/// States packed into matrices for batched forward/backward passes.
struct Batch {
    int size = 0;
    Eigen::MatrixXi gp;   // B x cells
    Eigen::MatrixXd gin;  // B x cells*max_inputs
    Eigen::MatrixXd pm;
    Eigen::MatrixXd om;
    Eigen::MatrixXd lj;
    Eigen::MatrixXd ac;  // B x n*action_feature_dim (0 columns in flat mode)

    static Batch pack(const QNetworkConfig& cfg, std::span<const StateVector* const> states);
    static Batch pack_one(const QNetworkConfig& cfg, const StateVector& state);
};

/// Activations kept by a forward pass for the matching backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> x, gi, gf, gg, go, c, tanhc, h;  // per LSTM step
    Eigen::MatrixXd zcat, acat;
    std::vector<Eigen::MatrixXd> value_act, adv_act;
};

struct QNetworkOutput {
    Eigen::VectorXd v;  // B
    Eigen::MatrixXd a;  // B x n
    Eigen::MatrixXd q;  // B x n
};

struct Gradients {
    Eigen::MatrixXd embed;
    LstmLayer lstm;
    std::vector<DenseLayer> value;  // hidden layers + scalar head
    std::vector<DenseLayer> adv;    // hidden layers + n-way head
    std::vector<std::uint8_t> embed_rows_touched;

    bool all_finite() const;
};

/// Dueling Q-network: Q(s,a) = V(s_state) + A(s_act,a) - mean_a' A(s_act,a').
/// The embedding table is shared: the value stream learns it, while the
/// advantage stream and the clustering only read it (no gradient flows into
/// the table through A_c).
class QNetwork {
public:
    QNetwork(QNetworkConfig cfg, std::uint64_t seed);

    const QNetworkConfig& config() const { return cfg_; }

    void embed(int primitive_id, std::span<double> out) const;
    Embedder embedder() const;  // keep the network alive while in use

    QNetworkOutput forward(const Batch& batch) const;
    QNetworkOutput forward(const Batch& batch, ForwardCache& cache) const;
    QNetworkOutput forward_one(const StateVector& state) const;

    /// Fast path for action selection: within one state the dueling shift
    /// (V - mean A) is shared by every slot, so ranking Q equals ranking A.
    Eigen::VectorXd advantage_one(const StateVector& state) const;

    /// Reverse-mode gradients for d(loss)/dQ of a cached forward pass.
    Gradients backward(const Batch& batch, const ForwardCache& cache,
                       const Eigen::MatrixXd& dq) const;

    void for_each_tensor(const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
    void for_each_tensor(
        const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) const;

    const Eigen::MatrixXd& embedding_table() const { return embed_; }

private:
    friend struct AdamState;
    QNetworkConfig cfg_;
    Eigen::MatrixXd embed_;  // embed_rows x embed_dim
    LstmLayer lstm_;
    std::vector<DenseLayer> value_;
    std::vector<DenseLayer> adv_;
};

/// Adaptive-moment optimizer (alpha 0.0005, decay 0.9/0.999, eps 1e-8) with
/// bias correction. Embedding rows with zero gradient this step are left
/// untouched so unused rows never drift.
struct AdamState {
    double alpha = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;

    explicit AdamState(const QNetwork& net, double alpha = 0.0005);

    /// Applies one update; skips it (and logs via return=false) when any
    /// gradient is non-finite.
    bool apply(QNetwork& net, const Gradients& g);

private:
    std::vector<Eigen::MatrixXd> m_, v_;
};

/// Writes <prefix>.json (manifest: config, catalog hash, tensor index,
/// extra) and <prefix>.bin (flat little-endian doubles per tensor).
void save_checkpoint(const QNetwork& net, const std::string& prefix,
                     const std::string& extra_json = "{}");
QNetwork load_checkpoint(const std::string& prefix, std::string* extra_json_out = nullptr);

}  // namespace gridpipe
