#include "stainkit/metrics.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "stainkit/errors.hpp"

namespace stainkit::metrics {

namespace {

struct Counts {
    long long inter = 0;
    long long pred = 0;
    long long gt = 0;
};

Counts overlap_counts(const SegMask& pred, const SegMask& gt) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw InvalidInput("mask dimension mismatch");
    Counts c;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        bool p = pred.values[i] != 0;
        bool g = gt.values[i] != 0;
        c.inter += (p && g);
        c.pred += p;
        c.gt += g;
    }
    return c;
}

Aggregate aggregate_rows(const std::vector<const ScoreRow*>& rows) {
    Aggregate a;
    a.count = static_cast<int>(rows.size());
    if (rows.empty()) return a;
    for (const ScoreRow* r : rows) {
        a.mean_dice += r->dice;
        a.mean_iou += r->iou;
        a.mean_cosas += r->cosas;
    }
    a.mean_dice /= a.count;
    a.mean_iou /= a.count;
    a.mean_cosas /= a.count;
    for (const ScoreRow* r : rows) {
        a.std_dice += (r->dice - a.mean_dice) * (r->dice - a.mean_dice);
        a.std_iou += (r->iou - a.mean_iou) * (r->iou - a.mean_iou);
        a.std_cosas += (r->cosas - a.mean_cosas) * (r->cosas - a.mean_cosas);
    }
    a.std_dice = std::sqrt(a.std_dice / a.count);
    a.std_iou = std::sqrt(a.std_iou / a.count);
    a.std_cosas = std::sqrt(a.std_cosas / a.count);
    return a;
}

nlohmann::json aggregate_to_json(const Aggregate& a) {
    return {{"mean_dice", a.mean_dice}, {"std_dice", a.std_dice},
            {"mean_iou", a.mean_iou},   {"std_iou", a.std_iou},
            {"mean_cosas", a.mean_cosas}, {"std_cosas", a.std_cosas},
            {"count", a.count}};
}

}  // namespace

double dice(const SegMask& pred, const SegMask& gt) {
    Counts c = overlap_counts(pred, gt);
    if (c.pred + c.gt == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

double iou(const SegMask& pred, const SegMask& gt) {
    Counts c = overlap_counts(pred, gt);
    long long uni = c.pred + c.gt - c.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double cosas_score(double d, double i) {
    return (d + i) / 2.0;
}

SegMask threshold_logits(const std::vector<double>& logits, int width, int height, double tau) {
    if (static_cast<std::size_t>(width) * height != logits.size())
        throw InvalidInput("threshold_logits: dimension mismatch");
    SegMask mask(width, height);
    for (std::size_t i = 0; i < logits.size(); ++i) mask.values[i] = logits[i] > tau ? 1 : 0;
    return mask;
}

RgbImage rotate90(const RgbImage& img, int quarter_turns) {
    int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return img;
    int w = img.width, h = img.height;
    int ow = (q % 2 == 0) ? w : h;
    int oh = (q % 2 == 0) ? h : w;
    RgbImage out(ow, oh);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int nx, ny;
            if (q == 1) {            // 90 CCW: (x, y) -> (y, w-1-x)
                nx = y;
                ny = w - 1 - x;
            } else if (q == 2) {     // 180
                nx = w - 1 - x;
                ny = h - 1 - y;
            } else {                 // 270 CCW
                nx = h - 1 - y;
                ny = x;
            }
            for (int c = 0; c < 3; ++c) out.at(nx, ny, c) = img.at(x, y, c);
        }
    }
    return out;
}

std::vector<double> rotate90_map(const std::vector<double>& values, int width, int height,
                                 int quarter_turns) {
    if (static_cast<std::size_t>(width) * height != values.size())
        throw InvalidInput("rotate90_map: dimension mismatch");
    int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return values;
    int ow = (q % 2 == 0) ? width : height;
    std::vector<double> out(values.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int nx, ny;
            if (q == 1) {
                nx = y;
                ny = width - 1 - x;
            } else if (q == 2) {
                nx = width - 1 - x;
                ny = height - 1 - y;
            } else {
                nx = height - 1 - y;
                ny = x;
            }
            out[static_cast<std::size_t>(ny) * ow + nx] =
                values[static_cast<std::size_t>(y) * width + x];
        }
    }
    return out;
}

std::vector<double> tta_predict(const Predictor& predict, const RgbImage& img) {
    std::vector<double> sum(static_cast<std::size_t>(img.pixels()), 0.0);
    for (int q = 0; q < 4; ++q) {
        RgbImage rotated = rotate90(img, q);
        std::vector<double> logits = predict(rotated);
        if (logits.size() != static_cast<std::size_t>(rotated.pixels()))
            throw InvalidInput("tta_predict: predictor output size mismatch");
        std::vector<double> back = rotate90_map(logits, rotated.width, rotated.height, -q);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += back[i];
    }
    for (double& v : sum) v /= 4.0;
    return sum;
}

MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) throw InvalidInput("evaluate_dataset: empty pair list");

    MetricsReport report;
    report.rows.reserve(pairs.size());
    for (const EvalPair& pair : pairs) {
        ScoreRow row;
        row.id = pair.id;
        row.groups = pair.groups;
        try {
            double d = dice(pair.pred, pair.gt);
            double i = iou(pair.pred, pair.gt);
            row.dice = d;
            row.iou = i;
            row.cosas = cosas_score(d, i);
            row.both_empty = pair.pred.values == std::vector<std::uint8_t>(pair.pred.values.size(), 0) &&
                             pair.gt.values == std::vector<std::uint8_t>(pair.gt.values.size(), 0) &&
                             !pair.pred.values.empty();
        } catch (const Error& e) {
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }

    std::vector<const ScoreRow*> valid;
    for (const ScoreRow& r : report.rows)
        if (!r.error) valid.push_back(&r);
    report.overall = aggregate_rows(valid);

    std::map<std::string, std::map<std::string, std::vector<const ScoreRow*>>> grouped;
    for (const ScoreRow* r : valid)
        for (const auto& [key, value] : r->groups) grouped[key][value].push_back(r);
    for (const auto& [key, values] : grouped)
        for (const auto& [value, rows] : values)
            report.by_group[key][value] = aggregate_rows(rows);
    return report;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["per_image"] = nlohmann::json::array();
    for (const ScoreRow& r : report.rows) {
        nlohmann::json row;
        row["id"] = r.id;
        if (r.error) {
            row["error"] = *r.error;
        } else {
            row["dice"] = r.dice;
            row["iou"] = r.iou;
            row["cosas"] = r.cosas;
            row["both_empty"] = r.both_empty;
        }
        for (const auto& [key, value] : r.groups) row[key] = value;
        j["per_image"].push_back(row);
    }
    j["overall"] = aggregate_to_json(report.overall);
    for (const auto& [key, values] : report.by_group)
        for (const auto& [value, agg] : values) j["by_" + key][value] = aggregate_to_json(agg);
    return j.dump(2);
}

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out.precision(12);
    out << "id,dice,iou,cosas,error\n";
    for (const ScoreRow& r : report.rows) {
        if (r.error)
            out << r.id << ",,,," << *r.error << "\n";
        else
            out << r.id << "," << r.dice << "," << r.iou << "," << r.cosas << ",\n";
    }
    out << "__mean__," << report.overall.mean_dice << "," << report.overall.mean_iou << ","
        << report.overall.mean_cosas << ",\n";
    out << "__std__," << report.overall.std_dice << "," << report.overall.std_iou << ","
        << report.overall.std_cosas << ",\n";
    return out.str();
}

}  // namespace stainkit::metrics
