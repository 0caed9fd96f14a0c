#pragma once

// Operator dependency analysis: which parent-layer operators does an operator
// set need? Element-wise and row-wise operators map to the identical index
// range; block-wise operators pull halo rows determined by kernel, stride,
// padding and dilation; global operators need every parent operator. Transfer
// sets M/N are whatever a device needs but did not compute itself.

#include <map>

#include "opsplit/engine.hpp"

namespace opsplit {

// Sorted unique operator indices of one producer.
class OpSet {
public:
    OpSet() = default;
    explicit OpSet(std::vector<uint32_t> v) : v_(std::move(v)) {
        std::sort(v_.begin(), v_.end());
        v_.erase(std::unique(v_.begin(), v_.end()), v_.end());
    }

    static OpSet range(Range r) {
        OpSet s;
        for (uint32_t i = r.lo; i < r.hi; ++i) s.v_.push_back(i);
        return s;
    }

    static OpSet all(uint32_t count) { return range({0, count}); }

    bool empty() const { return v_.empty(); }
    size_t size() const { return v_.size(); }
    const std::vector<uint32_t>& indices() const { return v_; }
    bool contains(uint32_t i) const {
        return std::binary_search(v_.begin(), v_.end(), i);
    }

    bool contains_all(const OpSet& o) const {
        return std::includes(v_.begin(), v_.end(), o.v_.begin(), o.v_.end());
    }

    OpSet union_with(const OpSet& o) const {
        OpSet r;
        std::set_union(v_.begin(), v_.end(), o.v_.begin(), o.v_.end(),
                       std::back_inserter(r.v_));
        return r;
    }

    OpSet minus(const OpSet& o) const {
        OpSet r;
        std::set_difference(v_.begin(), v_.end(), o.v_.begin(), o.v_.end(),
                            std::back_inserter(r.v_));
        return r;
    }

    OpSet intersect(const OpSet& o) const {
        OpSet r;
        std::set_intersection(v_.begin(), v_.end(), o.v_.begin(), o.v_.end(),
                              std::back_inserter(r.v_));
        return r;
    }

    // Contiguous runs, for range-oriented framing and file formats.
    std::vector<Range> runs() const {
        std::vector<Range> out;
        for (uint32_t i : v_) {
            if (!out.empty() && out.back().hi == i)
                out.back().hi = i + 1;
            else
                out.push_back({i, i + 1});
        }
        return out;
    }

    bool operator==(const OpSet& o) const { return v_ == o.v_; }

private:
    std::vector<uint32_t> v_;
};

// A set of operators of one layer (or of the raw input when layer_id ==
// kRawInput).
struct OperatorSet {
    uint32_t layer_id = 0;
    OpSet ops;
};

// Per-parent half-open row ranges on the parent's partition axis.
struct InputRegion {
    std::map<uint32_t, Range> ranges;  // producer id -> rows
};

// Rows of each parent's output needed to compute `ops` of `layer`. Not
// defined for global layers (they need every parent operator; see
// parent_ops). `ops` must be a non-empty contiguous index range.
inline InputRegion required_input(const ModelGraph& g, const Layer& layer, const OpSet& ops) {
    require(!layer.is_global(), "required_input on global layer");
    require(!ops.empty(), "required_input on empty set");
    auto runs = ops.runs();
    InputRegion region;
    Range out_rows = layer.rows_of_ops({runs.front().lo, runs.back().hi});
    size_t slots = layer.parents.empty() ? 1 : layer.parents.size();
    for (size_t j = 0; j < slots; ++j) {
        uint32_t producer = layer.parents.empty() ? kRawInput : layer.parents[j];
        const TensorSpec& pspec = g.producer_spec(producer);
        Range need = (layer.op == OpType::matmul && layer.rhs_name.empty() && j == 1)
                         ? Range{0, pspec.dims[row_axis(pspec)]}
                         : input_rows_for(layer, out_rows, pspec);
        auto [it, fresh] = region.ranges.emplace(producer, need);
        if (!fresh) {  // same producer feeding two slots
            it->second.lo = std::min(it->second.lo, need.lo);
            it->second.hi = std::max(it->second.hi, need.hi);
        }
    }
    return region;
}

// Parent operators whose outputs `ops` of `layer` needs. Global layers need
// all operators of every parent.
inline std::map<uint32_t, OpSet> parent_ops(const ModelGraph& g, const Layer& layer,
                                            const OpSet& ops) {
    std::map<uint32_t, OpSet> out;
    if (ops.empty()) return out;
    auto producers = [&] {
        std::vector<uint32_t> ps;
        if (layer.parents.empty())
            ps.push_back(kRawInput);
        else
            ps = layer.parents;
        return ps;
    }();
    if (layer.is_global()) {
        for (uint32_t p : producers) {
            OpSet full = OpSet::all(g.producer_op_count(p));
            auto [it, fresh] = out.emplace(p, full);
            if (!fresh) it->second = it->second.union_with(full);
        }
        return out;
    }
    InputRegion region = required_input(g, layer, ops);
    for (const auto& [p, rows] : region.ranges) {
        Range op_range = g.producer_ops_covering(p, rows);
        out.emplace(p, OpSet::range(op_range));
    }
    return out;
}

// Transfer sets for one layer, given both devices' operator sets of every
// producer. The robot owns the raw input; the server owns none of it.
//   M[p] = parent_ops(X_i)[p] - X_p   (server -> robot before layer i)
//   N[p] = parent_ops(Y_i)[p] - Y_p   (robot -> server before layer i)
struct TransferSets {
    std::map<uint32_t, OpSet> m;  // received by robot
    std::map<uint32_t, OpSet> n;  // received by server
    bool m_empty() const {
        for (const auto& [p, s] : m)
            if (!s.empty()) return false;
        return true;
    }
    bool n_empty() const {
        for (const auto& [p, s] : n)
            if (!s.empty()) return false;
        return true;
    }
};

inline TransferSets transfer_sets(const ModelGraph& g, const Layer& layer, const OpSet& x_i,
                                  const OpSet& y_i,
                                  const std::map<uint32_t, OpSet>& x_prev,
                                  const std::map<uint32_t, OpSet>& y_prev) {
    uint32_t op_count = layer.operator_count;
    OpSet cover = x_i.union_with(y_i);
    require(cover == OpSet::all(op_count),
            "coverage violation at layer " + std::to_string(layer.id));

    auto owned = [&](const std::map<uint32_t, OpSet>& sets, uint32_t producer,
                     bool robot) -> OpSet {
        if (producer == kRawInput)
            return robot ? OpSet::all(g.producer_op_count(kRawInput)) : OpSet{};
        auto it = sets.find(producer);
        return it == sets.end() ? OpSet{} : it->second;
    };

    TransferSets ts;
    for (const auto& [p, need] : parent_ops(g, layer, x_i)) {
        OpSet missing = need.minus(owned(x_prev, p, true));
        if (!missing.empty()) ts.m[p] = std::move(missing);
    }
    for (const auto& [p, need] : parent_ops(g, layer, y_i)) {
        OpSet missing = need.minus(owned(y_prev, p, false));
        if (!missing.empty()) ts.n[p] = std::move(missing);
    }
    return ts;
}

}  // namespace opsplit
