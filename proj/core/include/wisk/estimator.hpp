#pragma once

#include <memory>
#include <span>
#include <vector>

#include "wisk/geotext.hpp"

namespace wisk {

// Objects matching one query on each side of a split value, with derivatives
// with respect to the split value.
struct SideCounts {
    double left = 0.0;
    double right = 0.0;
    double d_left = 0.0;
    double d_right = 0.0;
};

// A subspace split along one axis, seen by a fixed list of queries. left(v)
// covers [lo, v] and right(v) covers (v, hi] of the subspace.
class SplitProfile {
  public:
    virtual ~SplitProfile() = default;
    virtual void evaluate(double v, std::span<const std::size_t> which, std::span<SideCounts> out) const = 0;
    virtual std::size_t num_queries() const = 0;
};

// Estimates how many objects in a region contain at least one of a keyword
// set. `members` lists object positions (into the estimator's object store)
// inside the region; estimators that do not scan objects ignore it.
class SelectivityEstimator {
  public:
    virtual ~SelectivityEstimator() = default;

    virtual double count(std::span<const KeywordId> keys, const Rect& region,
                         std::span<const std::uint32_t> members) const = 0;

    virtual std::unique_ptr<SplitProfile> split_profile(const Rect& region, Axis axis,
                                                        std::span<const std::uint32_t> members,
                                                        std::span<const Query* const> queries) const = 0;
};

// Scans objects. Piecewise constant, so its split derivatives are zero.
// With keyword_blind set every object matches every query, which models a
// purely spatial cost.
class ExactCountEstimator final : public SelectivityEstimator {
  public:
    explicit ExactCountEstimator(std::span<const GeoObject> objects, bool keyword_blind = false)
        : objects_(objects), keyword_blind_(keyword_blind) {}

    double count(std::span<const KeywordId> keys, const Rect& region,
                 std::span<const std::uint32_t> members) const override;

    std::unique_ptr<SplitProfile> split_profile(const Rect& region, Axis axis,
                                                std::span<const std::uint32_t> members,
                                                std::span<const Query* const> queries) const override;

    bool matches(const GeoObject& o, std::span<const KeywordId> keys) const {
        return keyword_blind_ || intersects(o.kws, keys);
    }

  private:
    std::span<const GeoObject> objects_;
    bool keyword_blind_;
};

}  // namespace wisk
