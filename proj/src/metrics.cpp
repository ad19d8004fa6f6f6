#include "fewshot/metrics.hpp"

#include <cmath>

#include "fewshot/error.hpp"

namespace fewshot::metrics {

double Tally::iou() const
{
    return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
}

Tally& Tally::operator+=(const Tally& o)
{
    intersection += o.intersection;
    union_ += o.union_;
    return *this;
}

void ConfusionAccumulator::accumulate(const image::Mask& prediction, const image::Mask& truth, int class_index)
{
    require(prediction.width == truth.width && prediction.height == truth.height, ErrorKind::ShapeMismatch,
            "prediction is " + std::to_string(prediction.width) + "x" + std::to_string(prediction.height) +
                " but ground truth is " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
    Tally fg;
    Tally bg;
    for (std::size_t i = 0; i < truth.ids.size(); ++i) {
        const std::uint8_t g = truth.ids[i];
        const std::uint8_t p = prediction.ids[i];
        require(p <= 1, ErrorKind::InvalidArgument, "prediction mask must be binary");
        if (g == image::kIgnore)
            continue;
        require(g <= 1, ErrorKind::InvalidArgument, "ground-truth mask must hold 0, 1 or the ignore value");
        fg.intersection += (p & g);
        fg.union_ += (p | g);
        bg.intersection += !(p | g);
        bg.union_ += !(p & g);
    }
    ClassTally& c = classes_[class_index];
    c.counts += fg;
    c.episodes += 1;
    foreground_ += fg;
    background_ += bg;
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other)
{
    for (const auto& [cls, tally] : other.classes_) {
        ClassTally& c = classes_[cls];
        c.counts += tally.counts;
        c.episodes += tally.episodes;
    }
    foreground_ += other.foreground_;
    background_ += other.background_;
}

MiouResult miou(const ConfusionAccumulator& acc, std::span<const int> fold_classes)
{
    MiouResult r;
    double sum = 0.0;
    for (int cls : fold_classes) {
        const auto it = acc.classes().find(cls);
        if (it == acc.classes().end() || it->second.episodes == 0) {
            r.empty_classes.push_back(cls);
            continue;
        }
        const double iou = it->second.counts.iou();
        r.classes.push_back({cls, iou, it->second.episodes});
        sum += iou;
    }
    require(!r.classes.empty(), ErrorKind::EmptyClass, "no fold class has any evaluated episode");
    r.miou = sum / static_cast<double>(r.classes.size());
    return r;
}

double biou(const ConfusionAccumulator& acc)
{
    return 0.5 * (acc.foreground().iou() + acc.background().iou());
}

RunAggregate aggregate_runs(std::span<const double> scores)
{
    require(scores.size() >= 2, ErrorKind::TooFewRuns,
            "a confidence interval needs at least 2 runs, got " + std::to_string(scores.size()));
    const double n = static_cast<double>(scores.size());
    double mean = 0.0;
    for (double s : scores)
        mean += s;
    mean /= n;
    double ss = 0.0;
    for (double s : scores)
        ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, 1.96 * sd / std::sqrt(n), scores.size()};
}

nlohmann::json to_json(const ConfusionAccumulator& acc, std::span<const int> fold_classes,
                       const std::vector<std::string>& class_names)
{
    const MiouResult m = miou(acc, fold_classes);
    nlohmann::json classes = nlohmann::json::array();
    for (const ClassScore& c : m.classes) {
        const std::string name =
            c.class_index >= 0 && c.class_index < static_cast<int>(class_names.size())
                ? class_names[static_cast<std::size_t>(c.class_index)]
                : std::to_string(c.class_index);
        classes.push_back({{"class", c.class_index}, {"name", name}, {"iou", c.iou}, {"episodes", c.episodes}});
    }
    return {{"miou", m.miou},
            {"biou", biou(acc)},
            {"foreground_iou", acc.foreground().iou()},
            {"background_iou", acc.background().iou()},
            {"classes", classes},
            {"empty_classes", m.empty_classes}};
}

nlohmann::json to_json(const RunAggregate& agg, std::span<const double> scores)
{
    return {{"runs", std::vector<double>(scores.begin(), scores.end())}, {"mean", agg.mean}, {"ci95", agg.ci95},
            {"n", agg.runs}};
}

}  // namespace fewshot::metrics
