#include "stainkit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "stainkit/color.hpp"
#include "stainkit/errors.hpp"

namespace stainkit::augment {

namespace {

constexpr double kMinStd = 0.01;

void normalize_columns(Eigen::MatrixXd& w) {
    for (int j = 0; j < w.cols(); ++j) {
        double norm = w.col(j).norm();
        if (norm > 0.0) w.col(j) /= norm;
    }
}

}  // namespace

const char* applied_name(AppliedAugment a) {
    switch (a) {
        case AppliedAugment::randstainna: return "randstainna";
        case AppliedAugment::stain_sep: return "stain_sep";
        default: return "identity";
    }
}

stainsep::StainMatrix perturb_stain_matrix(const stainsep::StainMatrix& w,
                                           const PerturbConfig& cfg, Rng& rng) {
    stainsep::StainMatrix out = w;
    for (int j = 0; j < out.basis.cols(); ++j)
        for (int c = 0; c < out.basis.rows(); ++c)
            out.basis(c, j) *= std::exp(rng.normal(0.0, cfg.scale_sigma));
    normalize_columns(out.basis);
    return out;
}

StainAugmentResult stain_augment(const RgbImage& img, const stainsep::SeparationConfig& cfg,
                                 const PerturbConfig& pcfg, Rng& rng) {
    OdImage od;
    try {
        od = color::rgb_to_od(img);
    } catch (const InvalidInput&) {
        return {img, true};
    }

    // Degenerate separations are retried with a reseeded initialization.
    stainsep::SeparationResult sep;
    stainsep::SeparationConfig attempt_cfg = cfg;
    for (int attempt = 0; attempt < std::max(pcfg.max_attempts, 1); ++attempt) {
        attempt_cfg.seed = cfg.seed + static_cast<std::uint64_t>(attempt);
        try {
            sep = stainsep::estimate_stains(od, attempt_cfg);
        } catch (const InsufficientTissue&) {
            return {img, true};
        }
        if (!sep.degenerate) break;
    }
    if (sep.degenerate) return {img, true};

    stainsep::StainMatrix perturbed = perturb_stain_matrix(sep.stains, pcfg, rng);
    OdImage recon = stainsep::reconstruct(perturbed, sep.density, img.width, img.height);
    return {color::od_to_rgb(recon), false};
}

StatPrior fit_stat_prior(const std::vector<RgbImage>& corpus) {
    if (corpus.empty()) throw InvalidInput("fit_stat_prior: empty corpus");

    const int n = static_cast<int>(corpus.size());
    std::vector<ChannelStats> stats;
    stats.reserve(corpus.size());
    for (const RgbImage& img : corpus) stats.push_back(color::channel_stats(color::rgb_to_lab(img)));

    StatPrior prior;
    prior.n_images = n;
    for (int c = 0; c < 3; ++c) {
        double sum_mean = 0.0, sum_std = 0.0;
        for (const ChannelStats& s : stats) {
            sum_mean += s.mean[c];
            sum_std += s.std[c];
        }
        double mu_mean = sum_mean / n;
        double mu_std = sum_std / n;
        double var_mean = 0.0, var_std = 0.0;
        for (const ChannelStats& s : stats) {
            var_mean += (s.mean[c] - mu_mean) * (s.mean[c] - mu_mean);
            var_std += (s.std[c] - mu_std) * (s.std[c] - mu_std);
        }
        prior.channels[c] = {mu_mean, std::sqrt(var_mean / n), mu_std, std::sqrt(var_std / n)};
    }
    return prior;
}

RgbImage randstainna_augment(const RgbImage& img, const StatPrior& prior, Rng& rng) {
    if (prior.n_images < 1) throw InvalidInput("randstainna_augment: invalid prior");

    LabImage lab = color::rgb_to_lab(img);
    ChannelStats stats = color::channel_stats(lab);

    std::array<double, 3> target_mean{}, target_std{};
    for (int c = 0; c < 3; ++c) {
        const StatPrior::Channel& ch = prior.channels[c];
        target_mean[c] = rng.normal(ch.mu_mean, ch.sigma_mean);
        target_std[c] = std::max(rng.normal(ch.mu_std, ch.sigma_std), kMinStd);
    }

    for (int p = 0; p < lab.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) {
            double scale = target_std[c] / std::max(stats.std[c], kMinStd);
            lab.at(p, c) = (lab.at(p, c) - stats.mean[c]) * scale + target_mean[c];
        }
    }
    return color::lab_to_rgb(lab);
}

AugmentedSample mixture_augment(const RgbImage& img, const SegMask& mask,
                                const MixturePolicy& policy, const StatPrior& prior,
                                const stainsep::SeparationConfig& scfg,
                                const PerturbConfig& pcfg, Rng& rng) {
    if (policy.p_randstainna < 0.0 || policy.p_stain_sep < 0.0 ||
        policy.p_randstainna > 1.0 || policy.p_stain_sep > 1.0 ||
        policy.p_randstainna + policy.p_stain_sep > 1.0)
        throw InvalidInput("mixture_augment: invalid policy probabilities");

    AugmentedSample out;
    out.mask = mask;
    double u = rng.uniform();
    if (u < policy.p_randstainna) {
        out.image = randstainna_augment(img, prior, rng);
        out.applied = AppliedAugment::randstainna;
    } else if (u < policy.p_randstainna + policy.p_stain_sep) {
        StainAugmentResult res = stain_augment(img, scfg, pcfg, rng);
        out.image = res.image;
        out.applied = res.fell_back ? AppliedAugment::identity : AppliedAugment::stain_sep;
    } else {
        out.image = img;
        out.applied = AppliedAugment::identity;
    }
    return out;
}

RgbImage flip_horizontal(const RgbImage& img) {
    RgbImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    return out;
}

RgbImage flip_vertical(const RgbImage& img) {
    RgbImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, img.height - 1 - y, c) = img.at(x, y, c);
    return out;
}

SegMask flip_horizontal(const SegMask& mask) {
    SegMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) out.at(mask.width - 1 - x, y) = mask.at(x, y);
    return out;
}

SegMask flip_vertical(const SegMask& mask) {
    SegMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) out.at(x, mask.height - 1 - y) = mask.at(x, y);
    return out;
}

void geometric_augment(RgbImage& img, SegMask& mask, Rng& rng) {
    if (img.width != mask.width || img.height != mask.height)
        throw InvalidInput("geometric_augment: image/mask dimension mismatch");
    if (rng.bernoulli(0.5)) {
        img = flip_horizontal(img);
        mask = flip_horizontal(mask);
    }
    if (rng.bernoulli(0.5)) {
        img = flip_vertical(img);
        mask = flip_vertical(mask);
    }
}

std::string prior_to_json(const StatPrior& prior) {
    nlohmann::json j;
    static const char* names[3] = {"L", "a", "b"};
    for (int c = 0; c < 3; ++c) {
        const StatPrior::Channel& ch = prior.channels[c];
        j[names[c]] = {{"mu_mean", ch.mu_mean},
                       {"sigma_mean", ch.sigma_mean},
                       {"mu_std", ch.mu_std},
                       {"sigma_std", ch.sigma_std}};
    }
    j["n_images"] = prior.n_images;
    return j.dump(2);
}

StatPrior prior_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    StatPrior prior;
    static const char* names[3] = {"L", "a", "b"};
    for (int c = 0; c < 3; ++c) {
        const nlohmann::json& ch = j.at(names[c]);
        prior.channels[c] = {ch.at("mu_mean").get<double>(), ch.at("sigma_mean").get<double>(),
                             ch.at("mu_std").get<double>(), ch.at("sigma_std").get<double>()};
        if (prior.channels[c].sigma_mean < 0.0 || prior.channels[c].sigma_std < 0.0)
            throw FormatError("prior: negative sigma");
    }
    prior.n_images = j.at("n_images").get<int>();
    if (prior.n_images < 1) throw FormatError("prior: n_images must be >= 1");
    return prior;
}

}  // namespace stainkit::augment
