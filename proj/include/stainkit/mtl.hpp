#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stainkit/rng.hpp"

namespace stainkit::mtl {

inline constexpr int kChannels = 3;  // m

// Per-pixel linear heads with softplus outputs. The density head emits
// r concentrations, the matrix head emits a per-pixel m x r basis, and
// the classification head maps their concatenation to a logit.
struct ToyModelParams {
    int d = 0;  // feature dimension
    int r = 0;  // stain count

    Eigen::MatrixXd a_h;   // d x r
    Eigen::VectorXd b_h;   // r
    Eigen::MatrixXd a_w;   // d x (m*r)
    Eigen::VectorXd b_w;   // m*r
    Eigen::VectorXd a_c;   // r + m*r
    double b_c = 0.0;

    static ToyModelParams zeros(int d, int r);
    static ToyModelParams random(int d, int r, Rng& rng, double scale = 0.1);

    int parameter_count() const;
    // flatten/unflatten in a fixed order (a_h, b_h, a_w, b_w, a_c, b_c)
    Eigen::VectorXd flatten() const;
    static ToyModelParams unflatten(const Eigen::VectorXd& v, int d, int r);
};

struct PixelBatch {
    Eigen::MatrixXd features;   // n x d
    Eigen::MatrixXd od_target;  // n x m, nonnegative
    Eigen::VectorXd labels;     // n, in {0, 1}

    int pixels() const { return static_cast<int>(features.rows()); }
};

struct ForwardResult {
    Eigen::MatrixXd h_hat;   // n x r
    Eigen::MatrixXd w_hat;   // n x (m*r), column index = stain*m + channel
    Eigen::VectorXd logits;  // n
    Eigen::MatrixXd recon;   // n x m, recon_i = W_i * h_i
};

struct LossWeights {
    double alpha = 0.3;
};

double softplus(double x);
double sigmoid(double x);

ForwardResult forward(const ToyModelParams& params, const PixelBatch& batch);

// Mean squared error over all n*m reconstruction entries.
double reconstruction_loss(const ForwardResult& res, const PixelBatch& batch);

// Mean binary cross-entropy on logits (log-sum-exp form).
double segmentation_loss(const ForwardResult& res, const PixelBatch& batch);

double total_loss(const LossWeights& weights, double recon, double seg);

// Analytic gradient of the total loss w.r.t. every parameter.
ToyModelParams gradients(const ToyModelParams& params, const PixelBatch& batch,
                         const LossWeights& weights);

struct TraceRow {
    int step = 0;
    double recon = 0.0;
    double seg = 0.0;
    double total = 0.0;
};

struct TrainResult {
    ToyModelParams params;
    std::vector<TraceRow> trace;
};

// Plain gradient descent over the full batch sequence per step.
TrainResult train(const ToyModelParams& init, const std::vector<PixelBatch>& batches,
                  const LossWeights& weights, double lr, int steps);

// Central finite differences on every parameter; returns the worst
// relative error against the analytic gradient.
double finite_diff_check(const ToyModelParams& params, const PixelBatch& batch,
                         const LossWeights& weights, double epsilon = 1e-5);

std::string params_to_json(const ToyModelParams& params);
ToyModelParams params_from_json(const std::string& json_text);

}  // namespace stainkit::mtl
