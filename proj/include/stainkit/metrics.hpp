#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit::metrics {

// Both-empty mask pairs score 1.0 for dice and iou.
double dice(const SegMask& pred, const SegMask& gt);
double iou(const SegMask& pred, const SegMask& gt);

// Arithmetic mean of dice and iou.
double cosas_score(double d, double i);

// Pixel positive iff logit > tau (tau=0 is probability 0.5).
SegMask threshold_logits(const std::vector<double>& logits, int width, int height,
                         double tau = 0.0);

// Predictor returning one logit per pixel with the input's dimensions.
using Predictor = std::function<std::vector<double>(const RgbImage&)>;

// Four-orientation test-time augmentation: predict on each 90-degree
// rotation, rotate the logit maps back, average pixel-wise.
std::vector<double> tta_predict(const Predictor& predict, const RgbImage& img);

// rotation helpers (quarter turns, counterclockwise positive)
RgbImage rotate90(const RgbImage& img, int quarter_turns);
std::vector<double> rotate90_map(const std::vector<double>& values, int width, int height,
                                 int quarter_turns);

struct EvalPair {
    std::string id;
    SegMask pred;
    SegMask gt;
    std::map<std::string, std::string> groups;  // e.g. scanner, fold
};

struct ScoreRow {
    std::string id;
    double dice = 0.0;
    double iou = 0.0;
    double cosas = 0.0;
    bool both_empty = false;
    std::optional<std::string> error;  // set for excluded rows
    std::map<std::string, std::string> groups;
};

struct Aggregate {
    double mean_dice = 0.0, std_dice = 0.0;
    double mean_iou = 0.0, std_iou = 0.0;
    double mean_cosas = 0.0, std_cosas = 0.0;
    int count = 0;
};

struct MetricsReport {
    std::vector<ScoreRow> rows;
    Aggregate overall;
    // key -> (group value -> aggregate), e.g. "scanner" -> {"s1": ...}
    std::map<std::string, std::map<std::string, Aggregate>> by_group;
};

MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs);

std::string report_to_json(const MetricsReport& report);
// One row per image plus trailing __mean__ and __std__ rows.
std::string report_to_csv(const MetricsReport& report);

}  // namespace stainkit::metrics
