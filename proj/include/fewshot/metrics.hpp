#pragma once

// Intersection-over-union accounting for binary episode predictions.
//
// Class IoU is dataset-level: intersections and unions are summed over every
// episode of the class before dividing. mIoU averages class IoUs over a fold's
// classes (background excluded); bIoU is the class-agnostic mean of the
// foreground and background IoU.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fewshot/image.hpp"
#include "json.hpp"

namespace fewshot::metrics {

struct Tally {
    std::uint64_t intersection = 0;
    std::uint64_t union_ = 0;

    /// intersection / union; an empty union counts as perfect agreement.
    double iou() const;
    Tally& operator+=(const Tally& o);
    bool operator==(const Tally&) const = default;
};

struct ClassTally {
    Tally counts;
    std::uint64_t episodes = 0;
    bool operator==(const ClassTally&) const = default;
};

class ConfusionAccumulator {
public:
    /// Adds one prediction. Both masks hold {0,1}; ground-truth kIgnore pixels are skipped.
    /// Throws ShapeMismatch for differing sizes and InvalidArgument for non-binary values.
    void accumulate(const image::Mask& prediction, const image::Mask& truth, int class_index);
    /// Associative and commutative.
    void merge(const ConfusionAccumulator& other);

    const std::map<int, ClassTally>& classes() const { return classes_; }
    const Tally& foreground() const { return foreground_; }
    const Tally& background() const { return background_; }
    bool operator==(const ConfusionAccumulator&) const = default;

private:
    std::map<int, ClassTally> classes_;
    Tally foreground_;
    Tally background_;
};

struct ClassScore {
    int class_index = 0;
    double iou = 0.0;
    std::uint64_t episodes = 0;
};

struct MiouResult {
    double miou = 0.0;
    std::vector<ClassScore> classes;  // classes with at least one episode
    std::vector<int> empty_classes;   // fold classes without episodes (skipped, warned)
};

/// Throws EmptyClass when none of the fold classes has an episode.
MiouResult miou(const ConfusionAccumulator& acc, std::span<const int> fold_classes);
double biou(const ConfusionAccumulator& acc);

struct RunAggregate {
    double mean = 0.0;
    double ci95 = 0.0;  // 1.96 · s / √n with the n−1 sample deviation
    std::size_t runs = 0;
};

/// Throws TooFewRuns for fewer than two runs.
RunAggregate aggregate_runs(std::span<const double> scores);

/// {"miou", "biou", "classes": [{"class","name","iou","episodes"}], "empty_classes": [...]}.
nlohmann::json to_json(const ConfusionAccumulator& acc, std::span<const int> fold_classes,
                       const std::vector<std::string>& class_names);
nlohmann::json to_json(const RunAggregate& agg, std::span<const double> scores);

}  // namespace fewshot::metrics
