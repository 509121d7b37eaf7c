// stainkit: stain separation, normalization, augmentation and
// segmentation scoring for H&E patches, as reproducible batch pipelines.
//
// Exit codes: 0 success, 1 I/O error, 2 invalid input / domain failure,
// 3 numeric failure. Errors go to stderr as JSON; human-readable output
// goes to stdout.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "stainkit/augment.hpp"
#include "stainkit/color.hpp"
#include "stainkit/dataio.hpp"
#include "stainkit/errors.hpp"
#include "stainkit/metrics.hpp"
#include "stainkit/mtl.hpp"
#include "stainkit/rng.hpp"
#include "stainkit/stainsep.hpp"

namespace fs = std::filesystem;
using namespace stainkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNumeric = 3;

struct GlobalOptions {
    std::uint64_t seed = 42;
    int threads = 0;  // 0 = available parallelism
    std::string output = ".";
    std::string log_level = "info";
};

void emit_error(const std::string& kind, const std::string& message) {
    nlohmann::json j{{"error", kind}, {"message", message}};
    std::cerr << j.dump() << "\n";
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const NotFound*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
    return kExitInvalid;
}

std::string error_kind(const Error& e) {
    if (dynamic_cast<const NotFound*>(&e)) return "NotFound";
    if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
    if (dynamic_cast<const ParseError*>(&e)) return "ParseError";
    if (dynamic_cast<const InsufficientTissue*>(&e)) return "InsufficientTissue";
    if (dynamic_cast<const InvalidInput*>(&e)) return "InvalidInput";
    return "Error";
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw NotFound("cannot open for writing: " + path);
    out << content;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path resolve_path(const std::string& base_file, const std::string& maybe_relative) {
    fs::path p(maybe_relative);
    if (p.is_absolute()) return p;
    return fs::path(base_file).parent_path() / p;
}

// ---------------------------------------------------------------- separate

int cmd_separate(const GlobalOptions& g, const std::string& image_path,
                 stainsep::SeparationConfig cfg) {
    cfg.seed = g.seed;
    RgbImage img = dataio::read_image(image_path);
    stainsep::SeparationResult sep = stainsep::estimate_stains(color::rgb_to_od(img), cfg);
    std::vector<double> scales = stainsep::density_percentile(sep.density, 99.0);

    fs::create_directories(g.output);

    nlohmann::json j = nlohmann::json::parse([&] {
        stainsep::StainProfile profile;
        profile.stains = sep.stains;
        profile.density_scale = scales;
        for (double& s : profile.density_scale) s = std::max(s, 1e-12);
        return stainsep::profile_to_json(profile);
    }());
    j["iterations"] = sep.iterations;
    j["converged"] = sep.converged;
    j["degenerate"] = sep.degenerate;
    j["density_summary"] = {{"pixels", sep.density.pixels()},
                            {"p99", scales},
                            {"mean", [&] {
                                 std::vector<double> m;
                                 for (int r = 0; r < sep.density.stains(); ++r)
                                     m.push_back(sep.density.density.row(r).mean());
                                 return m;
                             }()}};
    write_text((fs::path(g.output) / "stains.json").string(), j.dump(2));

    // per-stain density maps, rescaled to 8-bit by the 99th percentile
    for (int r = 0; r < sep.density.stains(); ++r) {
        RgbImage gray(img.width, img.height);
        double scale = std::max(scales[static_cast<std::size_t>(r)], 1e-12);
        for (int p = 0; p < img.pixels(); ++p) {
            double v = std::clamp(sep.density.density(r, p) / scale, 0.0, 1.0) * 255.0;
            auto byte = static_cast<std::uint8_t>(std::lround(v));
            for (int c = 0; c < 3; ++c) gray.data[static_cast<std::size_t>(p) * 3 + c] = byte;
        }
        dataio::write_image(gray, (fs::path(g.output) / ("density_" + std::to_string(r) + ".png")).string());
    }
    std::cout << "wrote " << g.output << "/stains.json (" << sep.density.stains()
              << " stains, " << sep.iterations << " iterations)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- normalize

int cmd_normalize(const GlobalOptions& g, const std::vector<std::string>& images,
                  const std::string& manifest_path, const std::string& target_path,
                  stainsep::SeparationConfig cfg) {
    cfg.seed = g.seed;
    stainsep::StainProfile target = stainsep::profile_from_json(read_text(target_path));

    std::vector<std::pair<std::string, std::string>> inputs;  // id, path
    if (!manifest_path.empty()) {
        dataio::Manifest manifest = dataio::read_manifest(manifest_path);
        for (const auto& row : manifest.rows)
            inputs.emplace_back(row.id, resolve_path(manifest_path, row.image_path).string());
    }
    for (const std::string& p : images) inputs.emplace_back(fs::path(p).stem().string(), p);
    if (inputs.empty()) {
        emit_error("InvalidInput", "no input images");
        return kExitInvalid;
    }

    fs::create_directories(g.output);
    nlohmann::json summary = nlohmann::json::array();
    int successes = 0;
    for (const auto& [id, path] : inputs) {
        nlohmann::json row{{"id", id}, {"input", path}};
        try {
            RgbImage img = dataio::read_image(path);
            RgbImage out = stainsep::normalize_spcn(img, target, cfg);
            std::string out_path = (fs::path(g.output) / fs::path(path).filename()).string();
            dataio::write_image(out, out_path);
            row["status"] = "ok";
            // filename only: keeps summaries byte-identical across output dirs
            row["output"] = fs::path(out_path).filename().string();
            ++successes;
        } catch (const Error& e) {
            row["status"] = "failed";
            row["error"] = e.what();
        }
        summary.push_back(row);
    }
    write_text((fs::path(g.output) / "normalize_summary.json").string(), summary.dump(2));
    std::cout << successes << "/" << inputs.size() << " images normalized\n";
    return successes > 0 ? kExitOk : kExitInvalid;
}

// ---------------------------------------------------------------- augment

int cmd_augment(const GlobalOptions& g, const std::string& manifest_path,
                std::vector<double> policy_probs, const std::string& prior_path, int n_variants,
                stainsep::SeparationConfig scfg, augment::PerturbConfig pcfg) {
    scfg.seed = g.seed;
    pcfg.seed = g.seed;
    augment::MixturePolicy policy;
    policy.p_randstainna = policy_probs[0];
    policy.p_stain_sep = policy_probs[1];

    augment::StatPrior prior{};
    if (policy.p_randstainna > 0.0) {
        if (prior_path.empty()) {
            emit_error("InvalidInput", "--prior is required when the RandStainNA probability is > 0");
            return kExitInvalid;
        }
        prior = augment::prior_from_json(read_text(prior_path));
    } else {
        prior.n_images = 1;  // unused branch still needs a valid prior object
    }

    dataio::Manifest manifest = dataio::read_manifest(manifest_path);
    if (manifest.rows.empty()) {
        emit_error("InvalidInput", "empty manifest");
        return kExitInvalid;
    }

    fs::create_directories(g.output);
    std::ofstream provenance((fs::path(g.output) / "provenance.csv").string());
    provenance << "id,variant,branch,seed\n";

    Rng root(g.seed);
    int successes = 0;
    std::size_t row_index = 0;
    for (const auto& row : manifest.rows) {
        for (int variant = 0; variant < n_variants; ++variant) {
            std::uint64_t stream = row_index * 1000003ULL + static_cast<std::uint64_t>(variant);
            Rng rng = root.split(stream);
            try {
                RgbImage img = dataio::read_image(resolve_path(manifest_path, row.image_path).string());
                SegMask mask;
                bool has_mask = !row.mask_path.empty();
                if (has_mask) mask = dataio::read_mask(resolve_path(manifest_path, row.mask_path).string());
                else mask = SegMask(img.width, img.height);

                augment::AugmentedSample sample =
                    augment::mixture_augment(img, mask, policy, prior, scfg, pcfg, rng);

                std::string base = row.id + "_v" + std::to_string(variant);
                dataio::write_image(sample.image, (fs::path(g.output) / (base + ".png")).string());
                if (has_mask)
                    dataio::write_mask(sample.mask, (fs::path(g.output) / (base + "_mask.png")).string());
                provenance << row.id << "," << variant << "," << augment::applied_name(sample.applied)
                           << "," << stream << "\n";
                ++successes;
            } catch (const Error& e) {
                provenance << row.id << "," << variant << ",error," << stream << "\n";
                emit_error(error_kind(e), row.id + ": " + e.what());
            }
        }
        ++row_index;
    }
    std::cout << successes << " augmented samples written to " << g.output << "\n";
    return successes > 0 ? kExitOk : kExitInvalid;
}

// ---------------------------------------------------------------- fit-prior

int cmd_fit_prior(const GlobalOptions& g, const std::string& manifest_path) {
    dataio::Manifest manifest = dataio::read_manifest(manifest_path);
    std::vector<RgbImage> corpus;
    for (const auto& row : manifest.rows)
        corpus.push_back(dataio::read_image(resolve_path(manifest_path, row.image_path).string()));
    augment::StatPrior prior = augment::fit_stat_prior(corpus);
    fs::create_directories(g.output);
    std::string out_path = (fs::path(g.output) / "prior.json").string();
    write_text(out_path, augment::prior_to_json(prior));
    std::cout << "wrote " << out_path << " (" << prior.n_images << " images)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- evaluate

// Deterministic stand-in segmentation model for --tta on: darker pixels
// score positive.
std::vector<double> luminance_logits(const RgbImage& img) {
    std::vector<double> logits(static_cast<std::size_t>(img.pixels()));
    for (int p = 0; p < img.pixels(); ++p) {
        double mean = (img.data[static_cast<std::size_t>(p) * 3] +
                       img.data[static_cast<std::size_t>(p) * 3 + 1] +
                       img.data[static_cast<std::size_t>(p) * 3 + 2]) / 3.0;
        logits[static_cast<std::size_t>(p)] = (127.5 - mean) / 32.0;
    }
    return logits;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& manifest_path, bool tta) {
    // manifest convention: image_path = prediction (mask PNG, or an RGB
    // image when --tta on), mask_path = ground truth mask
    dataio::Manifest manifest = dataio::read_manifest(manifest_path);
    if (manifest.rows.empty()) {
        emit_error("InvalidInput", "empty manifest");
        return kExitInvalid;
    }

    std::vector<metrics::EvalPair> pairs;
    std::vector<std::pair<std::string, std::string>> failures;  // id, error
    for (const auto& row : manifest.rows) {
        try {
            SegMask gt = dataio::read_mask(resolve_path(manifest_path, row.mask_path).string());
            SegMask pred;
            if (tta) {
                RgbImage img = dataio::read_image(resolve_path(manifest_path, row.image_path).string());
                std::vector<double> logits = metrics::tta_predict(luminance_logits, img);
                pred = metrics::threshold_logits(logits, img.width, img.height);
            } else {
                pred = dataio::read_mask(resolve_path(manifest_path, row.image_path).string());
            }
            metrics::EvalPair pair{row.id, std::move(pred), std::move(gt), {}};
            if (!row.scanner.empty()) pair.groups["scanner"] = row.scanner;
            if (row.fold) pair.groups["fold"] = std::to_string(*row.fold);
            pairs.push_back(std::move(pair));
        } catch (const Error& e) {
            failures.emplace_back(row.id, e.what());
        }
    }

    if (pairs.empty()) {
        emit_error("InvalidInput", "no readable prediction/ground-truth pairs");
        return kExitInvalid;
    }

    metrics::MetricsReport report = metrics::evaluate_dataset(pairs);
    for (const auto& [id, what] : failures) {
        metrics::ScoreRow row;
        row.id = id;
        row.error = what;
        report.rows.push_back(row);
    }

    fs::create_directories(g.output);
    write_text((fs::path(g.output) / "report.json").string(), metrics::report_to_json(report));
    write_text((fs::path(g.output) / "report.csv").string(), metrics::report_to_csv(report));

    char line[128];
    std::snprintf(line, sizeof line, "cosas=%.3f dice=%.3f iou=%.3f\n",
                  report.overall.mean_cosas, report.overall.mean_dice, report.overall.mean_iou);
    std::cout << line;
    return kExitOk;
}

// ---------------------------------------------------------------- train-toy

mtl::PixelBatch batch_from_manifest(const dataio::Manifest& manifest,
                                    const std::string& manifest_path) {
    std::vector<double> features, targets, labels;
    for (const auto& row : manifest.rows) {
        RgbImage img = dataio::read_image(resolve_path(manifest_path, row.image_path).string());
        SegMask mask = dataio::read_mask(resolve_path(manifest_path, row.mask_path).string());
        if (mask.width != img.width || mask.height != img.height)
            throw InvalidInput(row.id + ": image/mask dimension mismatch");
        OdImage od = color::rgb_to_od(img);
        for (int p = 0; p < img.pixels(); ++p) {
            for (int c = 0; c < 3; ++c) {
                features.push_back(od.at(c, p));
                targets.push_back(od.at(c, p));
            }
            labels.push_back(mask.values[static_cast<std::size_t>(p)]);
        }
    }
    const int n = static_cast<int>(labels.size());
    if (n == 0) throw InvalidInput("no pixels in manifest");
    mtl::PixelBatch batch;
    batch.features.resize(n, 3);
    batch.od_target.resize(n, 3);
    batch.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            batch.features(i, c) = features[static_cast<std::size_t>(i) * 3 + c];
            batch.od_target(i, c) = targets[static_cast<std::size_t>(i) * 3 + c];
        }
        batch.labels(i) = labels[static_cast<std::size_t>(i)];
    }
    return batch;
}

int cmd_train_toy(const GlobalOptions& g, const std::string& manifest_path, double alpha,
                  double lr, int steps) {
    dataio::Manifest manifest = dataio::read_manifest(manifest_path);
    mtl::PixelBatch batch = batch_from_manifest(manifest, manifest_path);

    Rng rng(g.seed);
    mtl::ToyModelParams init = mtl::ToyModelParams::random(3, 2, rng, 0.1);
    mtl::TrainResult result = mtl::train(init, {batch}, {alpha}, lr, steps);

    for (const mtl::TraceRow& row : result.trace) {
        if (!std::isfinite(row.total)) {
            emit_error("NumericFailure", "non-finite loss at step " + std::to_string(row.step));
            return kExitNumeric;
        }
    }

    fs::create_directories(g.output);
    write_text((fs::path(g.output) / "params.json").string(), mtl::params_to_json(result.params));
    std::ostringstream trace;
    trace.precision(17);
    trace << "step,recon,seg,total\n";
    for (const mtl::TraceRow& row : result.trace)
        trace << row.step << "," << row.recon << "," << row.seg << "," << row.total << "\n";
    write_text((fs::path(g.output) / "trace.csv").string(), trace.str());

    std::cout << "final total loss " << result.trace.back().total << " after " << steps
              << " steps\n";
    return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const GlobalOptions& g) {
    Rng rng(g.seed);
    mtl::ToyModelParams params = mtl::ToyModelParams::random(3, 2, rng);
    mtl::PixelBatch batch;
    const int n = 16;
    batch.features.resize(n, 3);
    batch.od_target.resize(n, 3);
    batch.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            batch.features(i, c) = rng.normal(0.0, 1.0);
            batch.od_target(i, c) = rng.uniform(0.0, 2.0);
        }
        batch.labels(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }

    double worst = 0.0;
    for (double alpha : {0.0, 0.3, 1.0})
        worst = std::max(worst, mtl::finite_diff_check(params, batch, {alpha}));
    std::cout << "max_relative_error=" << worst << "\n";
    if (worst >= 1e-5) {
        emit_error("NumericFailure", "gradient check failed");
        return kExitNumeric;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- split-folds

int cmd_split_folds(const GlobalOptions& g, const std::string& manifest_path, int k) {
    dataio::Manifest manifest = dataio::read_manifest(manifest_path);
    dataio::FoldAssignment folds = dataio::stratified_kfold(manifest, k, g.seed);
    fs::create_directories(g.output);
    std::string out_path = (fs::path(g.output) / "folds.json").string();
    write_text(out_path, dataio::folds_to_json(folds));
    std::cout << "wrote " << out_path << " (" << folds.assignments.size() << " ids, k=" << k
              << ")\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stain separation toolkit for H&E patches"};
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--seed", g.seed, "root seed; all randomness derives from it")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads (results are thread-count independent)");
    app.add_option("--output", g.output, "output directory")->capture_default_str();
    app.add_option("--log-level", g.log_level, "debug|info|warn|error")->capture_default_str();

    stainsep::SeparationConfig scfg;
    auto add_sep_flags = [&scfg](CLI::App* cmd) {
        cmd->add_option("--r", scfg.r, "number of stains")->capture_default_str();
        cmd->add_option("--sparsity", scfg.sparsity, "L1 weight on H")->capture_default_str();
        cmd->add_option("--max-iters", scfg.max_iters)->capture_default_str();
        cmd->add_option("--tol", scfg.tol)->capture_default_str();
        cmd->add_option("--tissue-threshold", scfg.tissue_od_threshold)->capture_default_str();
    };

    std::string image_path, manifest_path, target_path, prior_path;
    std::vector<std::string> image_list;
    std::vector<double> policy = {0.25, 0.25};
    int n_variants = 1;
    int k = 4;
    double alpha = 0.3, lr = 0.1;
    int steps = 100;
    std::string tta = "off";
    augment::PerturbConfig pcfg;

    CLI::App* separate = app.add_subcommand("separate", "fit stain matrix and densities");
    separate->add_option("image", image_path, "input PNG")->required();
    add_sep_flags(separate);

    CLI::App* normalize = app.add_subcommand("normalize", "SPCN normalization to a target profile");
    normalize->add_option("images", image_list, "input PNGs");
    normalize->add_option("--manifest", manifest_path);
    normalize->add_option("--target", target_path, "target profile JSON")->required();
    add_sep_flags(normalize);

    CLI::App* augment_cmd = app.add_subcommand("augment", "mixture stain augmentation");
    augment_cmd->add_option("--manifest", manifest_path)->required();
    augment_cmd->add_option("--policy", policy, "p_randstainna p_stain_sep")->expected(2);
    augment_cmd->add_option("--prior", prior_path, "StatPrior JSON");
    augment_cmd->add_option("--n", n_variants, "variants per input")->capture_default_str();
    augment_cmd->add_option("--scale-sigma", pcfg.scale_sigma)->capture_default_str();
    add_sep_flags(augment_cmd);

    CLI::App* fit_prior = app.add_subcommand("fit-prior", "fit LAB statistics prior");
    fit_prior->add_option("--manifest", manifest_path)->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    evaluate->add_option("--manifest", manifest_path,
                         "CSV; image_path = prediction, mask_path = ground truth")->required();
    evaluate->add_option("--tta", tta, "off|on (on: image_path is an RGB image, scored by the "
                                       "built-in luminance model under 4-orientation TTA)")
        ->check(CLI::IsMember({"off", "on"}))->capture_default_str();

    CLI::App* train_toy = app.add_subcommand("train-toy", "train the toy multi-head model");
    train_toy->add_option("--manifest", manifest_path)->required();
    train_toy->add_option("--alpha", alpha, "reconstruction loss weight")->capture_default_str();
    train_toy->add_option("--lr", lr)->capture_default_str();
    train_toy->add_option("--steps", steps)->capture_default_str();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");

    CLI::App* split_folds = app.add_subcommand("split-folds", "stratified k-fold assignment");
    split_folds->add_option("--manifest", manifest_path)->required();
    split_folds->add_option("--k", k)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (separate->parsed()) return cmd_separate(g, image_path, scfg);
        if (normalize->parsed()) return cmd_normalize(g, image_list, manifest_path, target_path, scfg);
        if (augment_cmd->parsed()) return cmd_augment(g, manifest_path, policy, prior_path, n_variants, scfg, pcfg);
        if (fit_prior->parsed()) return cmd_fit_prior(g, manifest_path);
        if (evaluate->parsed()) return cmd_evaluate(g, manifest_path, tta == "on");
        if (train_toy->parsed()) return cmd_train_toy(g, manifest_path, alpha, lr, steps);
        if (gradcheck->parsed()) return cmd_gradcheck(g);
        if (split_folds->parsed()) return cmd_split_folds(g, manifest_path, k);
    } catch (const Error& e) {
        emit_error(error_kind(e), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        emit_error("Error", e.what());
        return kExitIo;
    }
    return kExitOk;
}
