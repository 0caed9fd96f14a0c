#pragma once

// Deterministic float32 kernels for all supported layer ops, runnable on the
// full tensor or on row fragments. Both paths share one accumulation core per
// op (fixed summation order: channel-major, then kernel row, then kernel
// column; ascending k for matmul), so a fragment result is bit-identical to
// the corresponding slice of the full result. Padding is applied only at true
// tensor edges; interior fragment boundaries read the supplied halo rows.

#include "opsplit/model.hpp"

namespace opsplit {

// Rows [rows.lo, rows.hi) of `producer`'s output along its partition axis.
struct Fragment {
    uint32_t producer = 0;   // layer id or kRawInput
    Range rows;
    Tensor tensor;           // producer dims with axis extent rows.len()
    bool is_true_top_edge = false;
    bool is_true_bottom_edge = false;
};

inline Fragment make_fragment(const ModelGraph& g, uint32_t producer, Range rows, Tensor t) {
    const TensorSpec& full = g.producer_spec(producer);
    uint32_t axis = g.producer_axis(producer);
    invariant(rows.hi <= full.dims[axis] && !rows.empty(), "fragment range out of bounds");
    TensorSpec expect = full;
    expect.dims[axis] = rows.len();
    invariant(t.spec == expect, "fragment tensor dims mismatch");
    Fragment f;
    f.producer = producer;
    f.rows = rows;
    f.tensor = std::move(t);
    f.is_true_top_edge = rows.lo == 0;
    f.is_true_bottom_edge = rows.hi == full.dims[axis];
    return f;
}

inline Fragment full_fragment(const ModelGraph& g, uint32_t producer, Tensor t) {
    const TensorSpec& full = g.producer_spec(producer);
    uint32_t axis = g.producer_axis(producer);
    return make_fragment(g, producer, {0, full.dims[axis]}, std::move(t));
}

namespace kernels {

inline float apply_activation(OpType op, float x) {
    switch (op) {
        case OpType::relu: return x > 0.0f ? x : 0.0f;
        case OpType::sigmoid: return float(1.0 / (1.0 + std::exp(-double(x))));
        case OpType::silu: return float(double(x) / (1.0 + std::exp(-double(x))));
        default: invariant(false, "not an activation"); return 0.0f;
    }
}

// Conv2d rows [out_rows) given input rows [in_lo, in_lo + in_tensor_rows).
// Absolute coordinates; out-of-range taps are zero padding at true edges.
inline void conv2d_rows(const Layer& l, const Tensor& in, uint32_t in_lo, Range out_rows,
                        const WeightStore& ws, float* out) {
    const WindowParams& w = l.window;
    uint32_t in_c = l.input_spec.dims[0];
    uint32_t h_in = l.input_spec.dims[1];
    uint32_t w_in = l.input_spec.dims[2];
    uint32_t out_c = l.window.out_channels;
    uint32_t w_out = l.output_spec.dims[2];
    uint32_t rows = out_rows.len();
    const Tensor& wt = ws.get(w.weights_name);
    const float* bias = nullptr;
    if (!w.bias_name.empty()) bias = ws.get(w.bias_name).data.data();
    uint32_t in_rows = in.spec.dims[1];

    for (uint32_t oc = 0; oc < out_c; ++oc) {
        for (uint32_t oy = out_rows.lo; oy < out_rows.hi; ++oy) {
            for (uint32_t ox = 0; ox < w_out; ++ox) {
                double acc = bias ? double(bias[oc]) : 0.0;
                for (uint32_t ic = 0; ic < in_c; ++ic) {
                    for (uint32_t ky = 0; ky < w.kh; ++ky) {
                        int64_t y = int64_t(oy) * w.sh + int64_t(ky) * w.dh - w.ph;
                        if (y < 0 || y >= int64_t(h_in)) continue;
                        int64_t yl = y - in_lo;
                        invariant(yl >= 0 && yl < int64_t(in_rows),
                                  "conv2d input fragment missing row");
                        for (uint32_t kx = 0; kx < w.kw; ++kx) {
                            int64_t x = int64_t(ox) * w.sw + int64_t(kx) * w.dw - w.pw;
                            if (x < 0 || x >= int64_t(w_in)) continue;
                            double iv = in.data[(size_t(ic) * in_rows + size_t(yl)) * w_in +
                                                size_t(x)];
                            double wv = wt.data[((size_t(oc) * in_c + ic) * w.kh + ky) * w.kw +
                                                kx];
                            acc += iv * wv;
                        }
                    }
                }
                out[(size_t(oc) * rows + (oy - out_rows.lo)) * w_out + ox] = float(acc);
            }
        }
    }
}

inline void maxpool2d_rows(const Layer& l, const Tensor& in, uint32_t in_lo, Range out_rows,
                           float* out) {
    const WindowParams& w = l.window;
    uint32_t c = l.input_spec.dims[0];
    uint32_t h_in = l.input_spec.dims[1];
    uint32_t w_in = l.input_spec.dims[2];
    uint32_t w_out = l.output_spec.dims[2];
    uint32_t rows = out_rows.len();
    uint32_t in_rows = in.spec.dims[1];

    for (uint32_t ch = 0; ch < c; ++ch) {
        for (uint32_t oy = out_rows.lo; oy < out_rows.hi; ++oy) {
            for (uint32_t ox = 0; ox < w_out; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                for (uint32_t ky = 0; ky < w.kh; ++ky) {
                    int64_t y = int64_t(oy) * w.sh + int64_t(ky) * w.dh - w.ph;
                    if (y < 0 || y >= int64_t(h_in)) continue;
                    int64_t yl = y - in_lo;
                    invariant(yl >= 0 && yl < int64_t(in_rows),
                              "maxpool2d input fragment missing row");
                    for (uint32_t kx = 0; kx < w.kw; ++kx) {
                        int64_t x = int64_t(ox) * w.sw + int64_t(kx) * w.dw - w.pw;
                        if (x < 0 || x >= int64_t(w_in)) continue;
                        float v = in.data[(size_t(ch) * in_rows + size_t(yl)) * w_in + size_t(x)];
                        if (v > best) best = v;
                    }
                }
                out[(size_t(ch) * rows + (oy - out_rows.lo)) * w_out + ox] = best;
            }
        }
    }
}

// C rows [rows) = A rows [rows) x B, ascending-k accumulation.
inline void matmul_rows(const Tensor& a_rows, const Tensor& b, uint32_t n_rows, float* out) {
    uint32_t k_dim = a_rows.spec.dims[1];
    uint32_t n = b.spec.dims[1];
    for (uint32_t i = 0; i < n_rows; ++i) {
        for (uint32_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (uint32_t k = 0; k < k_dim; ++k)
                acc += double(a_rows.data[size_t(i) * k_dim + k]) *
                       double(b.data[size_t(k) * n + j]);
            out[size_t(i) * n + j] = float(acc);
        }
    }
}

// Numerically stabilized softmax over the last axis.
inline void softmax_last_axis(const Tensor& in, float* out) {
    uint32_t cols = in.spec.dims[in.spec.ndim() - 1];
    size_t rows = in.spec.elem_count() / cols;
    for (size_t r = 0; r < rows; ++r) {
        const float* x = in.data.data() + r * cols;
        float m = x[0];
        for (uint32_t j = 1; j < cols; ++j)
            if (x[j] > m) m = x[j];
        double sum = 0.0;
        for (uint32_t j = 0; j < cols; ++j) sum += std::exp(double(x[j]) - double(m));
        for (uint32_t j = 0; j < cols; ++j)
            out[r * cols + j] = float(std::exp(double(x[j]) - double(m)) / sum);
    }
}

}  // namespace kernels

// Input rows needed on each parent's partition axis to compute output rows
// [out_rows) of this layer. Global layers take the full parent extent.
inline Range input_rows_for(const Layer& l, Range out_rows, const TensorSpec& parent_spec) {
    if (l.is_global()) return {0, parent_spec.dims[row_axis(parent_spec)]};
    switch (l.cls) {
        case OperatorClass::element_wise:
        case OperatorClass::row_wise:
            return out_rows;
        case OperatorClass::block_wise: {
            const WindowParams& w = l.window;
            uint32_t h_in = l.input_spec.dims[1];
            int64_t lo = int64_t(out_rows.lo) * w.sh - w.ph;
            int64_t hi = int64_t(out_rows.hi - 1) * w.sh - w.ph + int64_t(w.dh) * (w.kh - 1) + 1;
            lo = std::max<int64_t>(lo, 0);
            hi = std::min<int64_t>(hi, h_in);
            invariant(lo < hi, "block-wise input region empty");
            return {uint32_t(lo), uint32_t(hi)};
        }
        default:
            invariant(false, "unreachable");
            return {};
    }
}

namespace detail {

inline void check_strict(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw InputError(std::string("non-finite values in ") + what);
}

}  // namespace detail

// Computes output rows [out_rows) from per-parent input fragments. inputs[j]
// must cover the required region of parent j (second operand of matmul/add
// without rhs= is parent slot 1). Values are bit-identical to the same rows of
// run_layer_full.
inline Fragment run_layer_fragment(const ModelGraph& g, const Layer& l,
                                   const std::vector<Fragment>& inputs, Range out_rows,
                                   bool strict = false) {
    size_t parent_slots = l.parents.empty() ? 1 : l.parents.size();
    invariant(inputs.size() == parent_slots, "wrong number of input fragments");
    invariant(!out_rows.empty() && out_rows.hi <= l.output_spec.dims[l.partition_axis],
              "output rows out of range");
    for (size_t j = 0; j < parent_slots; ++j) {
        const TensorSpec& pspec =
            l.parents.empty() ? g.input_spec : g.layer(l.parents[j]).output_spec;
        Range need = (l.op == OpType::matmul && l.rhs_name.empty() && j == 1)
                         ? Range{0, pspec.dims[row_axis(pspec)]}  // full replicated operand
                         : input_rows_for(l, out_rows, pspec);
        invariant(inputs[j].rows.lo <= need.lo && inputs[j].rows.hi >= need.hi,
                  "input fragment does not cover required rows (layer " + std::to_string(l.id) +
                      ")");
        if (strict) detail::check_strict(inputs[j].tensor, "layer input");
    }

    TensorSpec out_spec = l.output_spec;
    out_spec.dims[l.partition_axis] = out_rows.len();
    Tensor out = Tensor::zeros(out_spec);
    const Fragment& in0 = inputs[0];

    switch (l.op) {
        case OpType::relu:
        case OpType::sigmoid:
        case OpType::silu: {
            // Transform exactly the required rows of the supplied fragment.
            Tensor rows = in0.rows == out_rows
                              ? in0.tensor
                              : slice_axis(in0.tensor, l.partition_axis,
                                           out_rows.lo - in0.rows.lo, out_rows.hi - in0.rows.lo);
            for (size_t i = 0; i < rows.data.size(); ++i)
                out.data[i] = kernels::apply_activation(l.op, rows.data[i]);
            break;
        }
        case OpType::conv2d:
            kernels::conv2d_rows(l, in0.tensor, in0.rows.lo, out_rows, g.weights,
                                 out.data.data());
            break;
        case OpType::maxpool2d:
            kernels::maxpool2d_rows(l, in0.tensor, in0.rows.lo, out_rows, out.data.data());
            break;
        case OpType::matmul: {
            Tensor a = in0.rows == out_rows
                           ? in0.tensor
                           : slice_axis(in0.tensor, 0, out_rows.lo - in0.rows.lo,
                                        out_rows.hi - in0.rows.lo);
            const Tensor& b = l.rhs_name.empty() ? inputs[1].tensor : g.weights.get(l.rhs_name);
            kernels::matmul_rows(a, b, out_rows.len(), out.data.data());
            break;
        }
        case OpType::add: {
            Tensor a = in0.rows == out_rows
                           ? in0.tensor
                           : slice_axis(in0.tensor, l.partition_axis, out_rows.lo - in0.rows.lo,
                                        out_rows.hi - in0.rows.lo);
            Tensor b;
            if (l.rhs_name.empty()) {
                const Fragment& f1 = inputs[1];
                b = f1.rows == out_rows
                        ? f1.tensor
                        : slice_axis(f1.tensor, l.partition_axis, out_rows.lo - f1.rows.lo,
                                     out_rows.hi - f1.rows.lo);
            } else {
                b = slice_axis(g.weights.get(l.rhs_name), l.partition_axis, out_rows.lo,
                               out_rows.hi);
            }
            for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
            break;
        }
        case OpType::softmax:
            kernels::softmax_last_axis(in0.tensor, out.data.data());
            break;
        case OpType::flatten: {
            out.data = in0.tensor.data;
            break;
        }
    }

    if (strict) detail::check_strict(out, "layer output");
    return make_fragment(g, l.id, out_rows, std::move(out));
}

// Reference whole-tensor execution: the fragment path over the full range.
inline Tensor run_layer_full(const ModelGraph& g, const Layer& l,
                             const std::vector<Tensor>& inputs, bool strict = false) {
    std::vector<Fragment> frags;
    frags.reserve(inputs.size());
    for (size_t j = 0; j < inputs.size(); ++j) {
        uint32_t producer = l.parents.empty() ? kRawInput : l.parents[j];
        const TensorSpec& expect = g.producer_spec(producer);
        require(inputs[j].spec == expect, "layer " + std::to_string(l.id) +
                                              " input dims mismatch: want " + expect.to_string() +
                                              ", have " + inputs[j].spec.to_string());
        frags.push_back(full_fragment(g, producer, inputs[j]));
    }
    Range all{0, l.output_spec.dims[l.partition_axis]};
    return run_layer_fragment(g, l, frags, all, strict).tensor;
}

// Full single-device inference; the correctness reference for every plan.
inline Tensor run_model_reference(const ModelGraph& g, const Tensor& input, bool strict = false) {
    require(input.spec == g.input_spec, "model input dims mismatch");
    std::vector<Tensor> outputs(g.layers.size());
    for (const Layer& l : g.layers) {
        std::vector<Tensor> ins;
        if (l.parents.empty()) {
            ins.push_back(input);
        } else {
            for (uint32_t p : l.parents) ins.push_back(outputs[p]);
        }
        outputs[l.id] = run_layer_full(g, l, ins, strict);
    }
    return outputs.back();
}

// Assembles fragments of one producer's output. Duplicate coverage must agree
// byte-for-byte (redundantly computed operators land here from both devices).
class FragmentAssembly {
public:
    FragmentAssembly() = default;

    FragmentAssembly(const ModelGraph& g, uint32_t producer)
        : spec_(g.producer_spec(producer)),
          axis_(g.producer_axis(producer)),
          producer_(producer),
          buffer_(Tensor::zeros(spec_)),
          covered_(spec_.dims[axis_], false) {}

    uint32_t producer() const { return producer_; }

    void insert(const Fragment& f) {
        invariant(f.producer == producer_, "fragment producer mismatch");
        AxisShape s = axis_shape(spec_, axis_);
        for (uint32_t r = f.rows.lo; r < f.rows.hi; ++r) {
            uint32_t local = r - f.rows.lo;
            for (size_t o = 0; o < s.outer; ++o) {
                const float* src = f.tensor.data.data() + (o * f.rows.len() + local) * s.inner;
                float* dst = buffer_.data.data() + (o * s.extent + r) * s.inner;
                if (covered_[r]) {
                    invariant(std::memcmp(src, dst, s.inner * sizeof(float)) == 0,
                              "conflicting duplicate fragment content (producer " +
                                  std::to_string(producer_) + ", row " + std::to_string(r) + ")");
                } else {
                    std::memcpy(dst, src, s.inner * sizeof(float));
                }
            }
            covered_[r] = true;
        }
    }

    bool covers(Range rows) const {
        for (uint32_t r = rows.lo; r < rows.hi; ++r)
            if (!covered_[r]) return false;
        return true;
    }

    Fragment extract(const ModelGraph& g, Range rows) const {
        invariant(covers(rows), "gap in fragment coverage (producer " +
                                    std::to_string(producer_) + ")");
        Tensor t = rows.len() == spec_.dims[axis_] ? buffer_
                                                   : slice_axis(buffer_, axis_, rows.lo, rows.hi);
        return make_fragment(g, producer_, rows, std::move(t));
    }

    Tensor extract_full(const ModelGraph& g) const {
        return extract(g, {0, spec_.dims[axis_]}).tensor;
    }

private:
    TensorSpec spec_;
    uint32_t axis_ = 0;
    uint32_t producer_ = 0;
    Tensor buffer_;
    std::vector<bool> covered_;
};

// One-shot combine of fragments into the full producer tensor.
inline Tensor combine(const ModelGraph& g, uint32_t producer, const std::vector<Fragment>& frags) {
    FragmentAssembly fa(g, producer);
    for (const Fragment& f : frags) fa.insert(f);
    return fa.extract_full(g);
}

}  // namespace opsplit
