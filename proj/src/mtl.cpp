#include "stainkit/mtl.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "stainkit/errors.hpp"

namespace stainkit::mtl {

namespace {

constexpr int kM = kChannels;

void check_shapes(const ToyModelParams& p, const PixelBatch& batch) {
    if (p.d < 1 || p.r < 1) throw InvalidInput("model: d and r must be >= 1");
    if (batch.features.cols() != p.d) throw InvalidInput("batch: feature dimension mismatch");
    if (batch.od_target.rows() != batch.features.rows() || batch.od_target.cols() != kM)
        throw InvalidInput("batch: od_target shape mismatch");
    if (batch.labels.size() != batch.features.rows())
        throw InvalidInput("batch: label count mismatch");
    if (p.a_h.rows() != p.d || p.a_h.cols() != p.r || p.b_h.size() != p.r ||
        p.a_w.rows() != p.d || p.a_w.cols() != kM * p.r || p.b_w.size() != kM * p.r ||
        p.a_c.size() != p.r + kM * p.r)
        throw InvalidInput("model: parameter shape mismatch");
}

}  // namespace

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

ToyModelParams ToyModelParams::zeros(int d, int r) {
    ToyModelParams p;
    p.d = d;
    p.r = r;
    p.a_h = Eigen::MatrixXd::Zero(d, r);
    p.b_h = Eigen::VectorXd::Zero(r);
    p.a_w = Eigen::MatrixXd::Zero(d, kM * r);
    p.b_w = Eigen::VectorXd::Zero(kM * r);
    p.a_c = Eigen::VectorXd::Zero(r + kM * r);
    p.b_c = 0.0;
    return p;
}

ToyModelParams ToyModelParams::random(int d, int r, Rng& rng, double scale) {
    ToyModelParams p = zeros(d, r);
    auto fill = [&](Eigen::MatrixXd& m) {
        for (int j = 0; j < m.cols(); ++j)
            for (int i = 0; i < m.rows(); ++i) m(i, j) = rng.normal(0.0, scale);
    };
    auto fill_v = [&](Eigen::VectorXd& v) {
        for (int i = 0; i < v.size(); ++i) v(i) = rng.normal(0.0, scale);
    };
    fill(p.a_h);
    fill_v(p.b_h);
    fill(p.a_w);
    fill_v(p.b_w);
    fill_v(p.a_c);
    p.b_c = rng.normal(0.0, scale);
    return p;
}

int ToyModelParams::parameter_count() const {
    return static_cast<int>(a_h.size() + b_h.size() + a_w.size() + b_w.size() + a_c.size() + 1);
}

Eigen::VectorXd ToyModelParams::flatten() const {
    Eigen::VectorXd v(parameter_count());
    int k = 0;
    for (int j = 0; j < a_h.cols(); ++j)
        for (int i = 0; i < a_h.rows(); ++i) v(k++) = a_h(i, j);
    for (int i = 0; i < b_h.size(); ++i) v(k++) = b_h(i);
    for (int j = 0; j < a_w.cols(); ++j)
        for (int i = 0; i < a_w.rows(); ++i) v(k++) = a_w(i, j);
    for (int i = 0; i < b_w.size(); ++i) v(k++) = b_w(i);
    for (int i = 0; i < a_c.size(); ++i) v(k++) = a_c(i);
    v(k++) = b_c;
    return v;
}

ToyModelParams ToyModelParams::unflatten(const Eigen::VectorXd& v, int d, int r) {
    ToyModelParams p = zeros(d, r);
    if (v.size() != p.parameter_count()) throw InvalidInput("unflatten: size mismatch");
    int k = 0;
    for (int j = 0; j < p.a_h.cols(); ++j)
        for (int i = 0; i < p.a_h.rows(); ++i) p.a_h(i, j) = v(k++);
    for (int i = 0; i < p.b_h.size(); ++i) p.b_h(i) = v(k++);
    for (int j = 0; j < p.a_w.cols(); ++j)
        for (int i = 0; i < p.a_w.rows(); ++i) p.a_w(i, j) = v(k++);
    for (int i = 0; i < p.b_w.size(); ++i) p.b_w(i) = v(k++);
    for (int i = 0; i < p.a_c.size(); ++i) p.a_c(i) = v(k++);
    p.b_c = v(k++);
    return p;
}

ForwardResult forward(const ToyModelParams& params, const PixelBatch& batch) {
    check_shapes(params, batch);
    const int n = batch.pixels();
    const int r = params.r;

    ForwardResult res;
    res.h_hat = (batch.features * params.a_h).rowwise() + params.b_h.transpose();
    res.w_hat = (batch.features * params.a_w).rowwise() + params.b_w.transpose();
    res.h_hat = res.h_hat.unaryExpr([](double x) { return softplus(x); });
    res.w_hat = res.w_hat.unaryExpr([](double x) { return softplus(x); });

    res.logits.resize(n);
    res.recon = Eigen::MatrixXd::Zero(n, kM);
    for (int i = 0; i < n; ++i) {
        double z = params.b_c;
        for (int j = 0; j < r; ++j) z += params.a_c(j) * res.h_hat(i, j);
        for (int k = 0; k < kM * r; ++k) z += params.a_c(r + k) * res.w_hat(i, k);
        res.logits(i) = z;
        // recon_c = sum_j W(c, j) * h_j with W entry (c, j) at column j*m + c
        for (int c = 0; c < kM; ++c) {
            double acc = 0.0;
            for (int j = 0; j < r; ++j) acc += res.w_hat(i, j * kM + c) * res.h_hat(i, j);
            res.recon(i, c) = acc;
        }
    }
    return res;
}

double reconstruction_loss(const ForwardResult& res, const PixelBatch& batch) {
    if (res.recon.rows() != batch.od_target.rows() || res.recon.cols() != batch.od_target.cols())
        throw InvalidInput("reconstruction_loss: shape mismatch");
    const double n_entries = static_cast<double>(res.recon.rows() * res.recon.cols());
    return (res.recon - batch.od_target).squaredNorm() / n_entries;
}

double segmentation_loss(const ForwardResult& res, const PixelBatch& batch) {
    if (res.logits.size() != batch.labels.size())
        throw InvalidInput("segmentation_loss: shape mismatch");
    const int n = static_cast<int>(res.logits.size());
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = res.logits(i);
        double y = batch.labels(i);
        // stable BCE: max(z, 0) - z*y + log(1 + exp(-|z|))
        sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return sum / n;
}

double total_loss(const LossWeights& weights, double recon, double seg) {
    return weights.alpha * recon + seg;
}

ToyModelParams gradients(const ToyModelParams& params, const PixelBatch& batch,
                         const LossWeights& weights) {
    check_shapes(params, batch);
    const int n = batch.pixels();
    const int r = params.r;

    // re-derive pre-activations for the softplus derivative
    Eigen::MatrixXd pre_h = (batch.features * params.a_h).rowwise() + params.b_h.transpose();
    Eigen::MatrixXd pre_w = (batch.features * params.a_w).rowwise() + params.b_w.transpose();
    Eigen::MatrixXd h_hat = pre_h.unaryExpr([](double x) { return softplus(x); });
    Eigen::MatrixXd w_hat = pre_w.unaryExpr([](double x) { return softplus(x); });

    ToyModelParams g = ToyModelParams::zeros(params.d, params.r);

    for (int i = 0; i < n; ++i) {
        double z = params.b_c;
        for (int j = 0; j < r; ++j) z += params.a_c(j) * h_hat(i, j);
        for (int k = 0; k < kM * r; ++k) z += params.a_c(r + k) * w_hat(i, k);

        // dL_seg/dz, averaged over pixels
        double g_z = (sigmoid(z) - batch.labels(i)) / n;

        Eigen::VectorXd g_h = Eigen::VectorXd::Zero(r);
        Eigen::VectorXd g_w = Eigen::VectorXd::Zero(kM * r);
        for (int j = 0; j < r; ++j) g_h(j) = g_z * params.a_c(j);
        for (int k = 0; k < kM * r; ++k) g_w(k) = g_z * params.a_c(r + k);

        // reconstruction term: dL_recon/drecon_c = 2 (recon_c - t_c) / (n*m)
        for (int c = 0; c < kM; ++c) {
            double recon_c = 0.0;
            for (int j = 0; j < r; ++j) recon_c += w_hat(i, j * kM + c) * h_hat(i, j);
            double g_recon = weights.alpha * 2.0 * (recon_c - batch.od_target(i, c)) /
                             (static_cast<double>(n) * kM);
            for (int j = 0; j < r; ++j) {
                g_h(j) += g_recon * w_hat(i, j * kM + c);
                g_w(j * kM + c) += g_recon * h_hat(i, j);
            }
        }

        // through softplus
        for (int j = 0; j < r; ++j) g_h(j) *= sigmoid(pre_h(i, j));
        for (int k = 0; k < kM * r; ++k) g_w(k) *= sigmoid(pre_w(i, k));

        const Eigen::VectorXd x = batch.features.row(i).transpose();
        g.a_h += x * g_h.transpose();
        g.b_h += g_h;
        g.a_w += x * g_w.transpose();
        g.b_w += g_w;
        for (int j = 0; j < r; ++j) g.a_c(j) += g_z * h_hat(i, j);
        for (int k = 0; k < kM * r; ++k) g.a_c(r + k) += g_z * w_hat(i, k);
        g.b_c += g_z;
    }
    return g;
}

TrainResult train(const ToyModelParams& init, const std::vector<PixelBatch>& batches,
                  const LossWeights& weights, double lr, int steps) {
    if (lr < 0.0) throw InvalidInput("train: lr must be >= 0");
    if (steps < 1) throw InvalidInput("train: steps must be >= 1");
    if (batches.empty()) throw InvalidInput("train: no batches");

    TrainResult result;
    result.params = init;
    result.trace.reserve(static_cast<std::size_t>(steps));

    for (int step = 0; step < steps; ++step) {
        const PixelBatch& batch = batches[static_cast<std::size_t>(step) % batches.size()];
        ForwardResult res = forward(result.params, batch);
        double recon = reconstruction_loss(res, batch);
        double seg = segmentation_loss(res, batch);
        result.trace.push_back({step, recon, seg, total_loss(weights, recon, seg)});

        ToyModelParams g = gradients(result.params, batch, weights);
        result.params.a_h -= lr * g.a_h;
        result.params.b_h -= lr * g.b_h;
        result.params.a_w -= lr * g.a_w;
        result.params.b_w -= lr * g.b_w;
        result.params.a_c -= lr * g.a_c;
        result.params.b_c -= lr * g.b_c;
    }
    return result;
}

double finite_diff_check(const ToyModelParams& params, const PixelBatch& batch,
                         const LossWeights& weights, double epsilon) {
    if (epsilon <= 0.0) throw InvalidInput("finite_diff_check: epsilon must be > 0");

    auto loss_at = [&](const Eigen::VectorXd& flat) {
        ToyModelParams p = ToyModelParams::unflatten(flat, params.d, params.r);
        ForwardResult res = forward(p, batch);
        return total_loss(weights, reconstruction_loss(res, batch), segmentation_loss(res, batch));
    };

    Eigen::VectorXd flat = params.flatten();
    Eigen::VectorXd analytic = gradients(params, batch, weights).flatten();

    double worst = 0.0;
    for (int k = 0; k < flat.size(); ++k) {
        Eigen::VectorXd plus = flat, minus = flat;
        plus(k) += epsilon;
        minus(k) -= epsilon;
        double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * epsilon);
        double denom = std::max({std::abs(analytic(k)), std::abs(fd), 1e-8});
        worst = std::max(worst, std::abs(analytic(k) - fd) / denom);
    }
    return worst;
}

std::string params_to_json(const ToyModelParams& params) {
    nlohmann::json j;
    j["d"] = params.d;
    j["r"] = params.r;
    j["m"] = kM;
    Eigen::VectorXd flat = params.flatten();
    j["values"] = std::vector<double>(flat.data(), flat.data() + flat.size());
    return j.dump(2);
}

ToyModelParams params_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    int d = j.at("d").get<int>();
    int r = j.at("r").get<int>();
    auto values = j.at("values").get<std::vector<double>>();
    Eigen::VectorXd flat = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<long>(values.size()));
    return ToyModelParams::unflatten(flat, d, r);
}

}  // namespace stainkit::mtl
