#pragma once

// Layer DAG with operator classification and output partitioning.
//
// Each non-global layer is partitioned into operators along one output axis
// (the row axis: height for spatial tensors, matrix rows otherwise). One
// operator covers `group` adjacent indices; group 1 is the finest split.
// Global layers (softmax, flatten, one-row matrix ops) have exactly one
// operator and need the whole parent output.

#include <optional>
#include <set>
#include <sstream>

#include "opsplit/tensor.hpp"

namespace opsplit {

// Producer id used for the raw model input wherever a layer id is expected.
constexpr uint32_t kRawInput = 0xFFFFFFFFu;

enum class OpType : uint8_t {
    relu,
    sigmoid,
    silu,
    conv2d,
    maxpool2d,
    matmul,
    add,
    softmax,
    flatten,
};

inline const char* op_name(OpType t) {
    switch (t) {
        case OpType::relu: return "relu";
        case OpType::sigmoid: return "sigmoid";
        case OpType::silu: return "silu";
        case OpType::conv2d: return "conv2d";
        case OpType::maxpool2d: return "maxpool2d";
        case OpType::matmul: return "matmul";
        case OpType::add: return "add";
        case OpType::softmax: return "softmax";
        case OpType::flatten: return "flatten";
    }
    return "?";
}

inline std::optional<OpType> op_from_name(const std::string& s) {
    for (OpType t : {OpType::relu, OpType::sigmoid, OpType::silu, OpType::conv2d,
                     OpType::maxpool2d, OpType::matmul, OpType::add, OpType::softmax,
                     OpType::flatten})
        if (s == op_name(t)) return t;
    return std::nullopt;
}

enum class OperatorClass : uint8_t { element_wise, block_wise, row_wise, global_op };

inline const char* class_name(OperatorClass c) {
    switch (c) {
        case OperatorClass::element_wise: return "element-wise";
        case OperatorClass::block_wise: return "block-wise";
        case OperatorClass::row_wise: return "row-wise";
        case OperatorClass::global_op: return "global";
    }
    return "?";
}

// Window geometry for conv2d/maxpool2d (kernel, stride, padding, dilation per
// spatial axis; channels only meaningful for conv2d).
struct WindowParams {
    uint32_t kh = 1, kw = 1;
    uint32_t sh = 1, sw = 1;
    uint32_t ph = 0, pw = 0;
    uint32_t dh = 1, dw = 1;
    uint32_t out_channels = 0;       // conv2d only
    std::string weights_name;        // conv2d only
    std::string bias_name;           // conv2d only, optional

    void validate() const {
        require(kh >= 1 && kw >= 1, "kernel dims must be >= 1");
        require(sh >= 1 && sw >= 1, "stride must be >= 1");
        require(dh >= 1 && dw >= 1, "dilation must be >= 1");
    }
};

// Output extent of a windowed axis; errors if the window never fits.
inline uint32_t window_out_extent(uint32_t in, uint32_t k, uint32_t s, uint32_t p, uint32_t d) {
    int64_t span = int64_t(in) + 2 * int64_t(p) - int64_t(d) * (int64_t(k) - 1) - 1;
    require(span >= 0, "window larger than padded input");
    return uint32_t(span / int64_t(s) + 1);
}

// Half-open index range on a partition axis.
struct Range {
    uint32_t lo = 0;
    uint32_t hi = 0;
    uint32_t len() const { return hi - lo; }
    bool empty() const { return hi <= lo; }
    bool operator==(const Range& o) const { return lo == o.lo && hi == o.hi; }
};

struct Layer {
    uint32_t id = 0;
    OpType op = OpType::relu;
    OperatorClass cls = OperatorClass::element_wise;
    std::vector<uint32_t> parents;   // empty -> reads the raw model input
    WindowParams window;             // conv2d/maxpool2d
    std::string rhs_name;            // matmul/add constant operand ("" = second parent)
    TensorSpec input_spec;           // first parent's output (or raw input)
    TensorSpec output_spec;
    uint32_t group = 1;
    uint32_t operator_count = 1;
    uint32_t partition_axis = 0;     // valid when cls != global_op

    bool is_global() const { return cls == OperatorClass::global_op; }

    // Output slice covered by operator `idx`.
    Range slice_range(uint32_t idx) const {
        invariant(idx < operator_count, "operator index out of range");
        if (is_global()) return {0, output_spec.dims.empty() ? 1u : output_spec.dims[partition_axis]};
        uint32_t extent = output_spec.dims[partition_axis];
        uint32_t lo = idx * group;
        uint32_t hi = std::min(extent, lo + group);
        return {lo, hi};
    }

    // Smallest operator index range whose slices cover `rows` of the output axis.
    Range ops_covering(Range rows) const {
        invariant(!is_global(), "ops_covering on global layer");
        if (rows.empty()) return {0, 0};
        uint32_t extent = output_spec.dims[partition_axis];
        invariant(rows.hi <= extent, "ops_covering: rows out of range");
        return {rows.lo / group, (rows.hi - 1) / group + 1};
    }

    // Output rows covered by operator index range [ops.lo, ops.hi).
    Range rows_of_ops(Range ops) const {
        if (ops.empty()) return {0, 0};
        if (is_global()) return slice_range(0);
        Range first = slice_range(ops.lo);
        Range last = slice_range(ops.hi - 1);
        return {first.lo, last.hi};
    }
};

// The axis a tensor is partitioned along: rows for matrices and spatial
// tensors (second-to-last dim), the only dim for 1-D tensors.
inline uint32_t row_axis(const TensorSpec& spec) {
    return spec.ndim() >= 2 ? uint32_t(spec.ndim() - 2) : 0u;
}

inline uint64_t row_bytes(const TensorSpec& spec, uint32_t axis) {
    AxisShape s = axis_shape(spec, axis);
    return uint64_t(s.outer) * s.inner * sizeof(float);
}

class ModelGraph {
public:
    TensorSpec input_spec;
    std::vector<Layer> layers;
    WeightStore weights;
    uint32_t group = 1;

    uint32_t final_layer_id() const { return uint32_t(layers.size() - 1); }

    const Layer& layer(uint32_t id) const {
        invariant(id < layers.size(), "layer id out of range");
        return layers[id];
    }

    // Output spec of a producer (layer id or kRawInput).
    const TensorSpec& producer_spec(uint32_t producer) const {
        return producer == kRawInput ? input_spec : layer(producer).output_spec;
    }

    // Partition geometry of a producer's output. The raw input is split into
    // unit rows so transfer accounting stays exact.
    uint32_t producer_axis(uint32_t producer) const {
        if (producer == kRawInput) return row_axis(input_spec);
        return layer(producer).is_global() ? row_axis(layer(producer).output_spec)
                                           : layer(producer).partition_axis;
    }

    uint32_t producer_op_count(uint32_t producer) const {
        if (producer == kRawInput) return input_spec.dims[row_axis(input_spec)];
        return layer(producer).operator_count;
    }

    Range producer_rows_of_ops(uint32_t producer, Range ops) const {
        if (producer == kRawInput) return ops;
        return layer(producer).rows_of_ops(ops);
    }

    Range producer_ops_covering(uint32_t producer, Range rows) const {
        if (producer == kRawInput) return rows;
        return layer(producer).ops_covering(rows);
    }

    uint64_t producer_row_bytes(uint32_t producer) const {
        const TensorSpec& spec = producer_spec(producer);
        return row_bytes(spec, producer_axis(producer));
    }

    const std::vector<std::vector<uint32_t>>& children() const { return children_; }

    void finalize() {
        validate();
        children_.assign(layers.size(), {});
        for (const Layer& l : layers)
            for (uint32_t p : l.parents) children_[p].push_back(l.id);
    }

    // Canonical text form; also the checksum and wire payload basis.
    std::string canonical_text() const;

    uint32_t checksum() const {
        std::string text = canonical_text();
        uint32_t c = crc32_str(text);
        std::string manifest = weights.manifest_text();
        c = crc32_update(c, manifest.data(), manifest.size());
        auto blob = weights.blob();
        return crc32_update(c, blob.data(), blob.size() * sizeof(float));
    }

private:
    void validate() const {
        require(!layers.empty(), "model has no layers");
        input_spec.validate();
        std::vector<bool> has_child(layers.size(), false);
        for (size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            require(l.id == i, "layer ids must be dense and ordered");
            for (uint32_t p : l.parents) {
                require(p < l.id, "parent id must precede child (topological order)");
                has_child[p] = true;
            }
            require((l.operator_count == 1) == l.is_global(),
                    "operator_count 1 must coincide with global class");
        }
        size_t sinks = 0;
        for (size_t i = 0; i < layers.size(); ++i)
            if (!has_child[i]) ++sinks;
        require(sinks == 1, "model must have exactly one final layer");
        require(!has_child[layers.size() - 1], "final layer must be the last layer");
    }

    std::vector<std::vector<uint32_t>> children_;
};

namespace detail {

inline std::pair<uint32_t, uint32_t> parse_pair(const std::string& v, const std::string& what) {
    size_t x = v.find('x');
    require(x != std::string::npos, "expected AxB for " + what + ", got " + v);
    return {uint32_t(std::stoul(v.substr(0, x))), uint32_t(std::stoul(v.substr(x + 1)))};
}

inline std::map<std::string, std::string> parse_kv(std::istringstream& is) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (is >> tok) {
        size_t eq = tok.find('=');
        require(eq != std::string::npos, "expected key=value, got " + tok);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

}  // namespace detail

// Shape arithmetic + classification for one layer whose parents are resolved.
inline void classify_layer(Layer& l, const std::vector<TensorSpec>& parent_specs,
                           const WeightStore& weights, uint32_t group) {
    require(!parent_specs.empty(), "layer needs at least one input");
    l.input_spec = parent_specs[0];
    l.group = group;

    switch (l.op) {
        case OpType::relu:
        case OpType::sigmoid:
        case OpType::silu:
            require(parent_specs.size() == 1, "activation takes one input");
            l.cls = OperatorClass::element_wise;
            l.output_spec = l.input_spec;
            break;
        case OpType::conv2d: {
            require(parent_specs.size() == 1, "conv2d takes one input");
            require(l.input_spec.ndim() == 3, "conv2d expects CxHxW input");
            l.window.validate();
            l.cls = OperatorClass::block_wise;
            uint32_t in_c = l.input_spec.dims[0];
            uint32_t oh = window_out_extent(l.input_spec.dims[1], l.window.kh, l.window.sh,
                                            l.window.ph, l.window.dh);
            uint32_t ow = window_out_extent(l.input_spec.dims[2], l.window.kw, l.window.sw,
                                            l.window.pw, l.window.dw);
            require(l.window.out_channels >= 1, "conv2d needs out channels");
            const Tensor& w = weights.get(l.window.weights_name);
            TensorSpec expect{{l.window.out_channels, in_c, l.window.kh, l.window.kw}};
            require(w.spec == expect, "conv2d weight dims mismatch: want " + expect.to_string() +
                                          ", have " + w.spec.to_string());
            if (!l.window.bias_name.empty()) {
                const Tensor& b = weights.get(l.window.bias_name);
                require(b.spec == TensorSpec{{l.window.out_channels}},
                        "conv2d bias dims mismatch");
            }
            l.output_spec = TensorSpec{{l.window.out_channels, oh, ow}};
            break;
        }
        case OpType::maxpool2d: {
            require(parent_specs.size() == 1, "maxpool2d takes one input");
            require(l.input_spec.ndim() == 3, "maxpool2d expects CxHxW input");
            l.window.validate();
            require(l.window.ph < l.window.kh && l.window.pw < l.window.kw,
                    "maxpool2d padding must be smaller than kernel");
            l.cls = OperatorClass::block_wise;
            uint32_t oh = window_out_extent(l.input_spec.dims[1], l.window.kh, l.window.sh,
                                            l.window.ph, l.window.dh);
            uint32_t ow = window_out_extent(l.input_spec.dims[2], l.window.kw, l.window.sw,
                                            l.window.pw, l.window.dw);
            l.output_spec = TensorSpec{{l.input_spec.dims[0], oh, ow}};
            break;
        }
        case OpType::matmul: {
            require(l.input_spec.ndim() == 2, "matmul expects RxK input");
            TensorSpec rhs_spec;
            if (!l.rhs_name.empty()) {
                require(parent_specs.size() == 1, "matmul with rhs= takes one input");
                rhs_spec = weights.get(l.rhs_name).spec;
            } else {
                require(parent_specs.size() == 2, "matmul without rhs= takes two inputs");
                rhs_spec = parent_specs[1];
            }
            require(rhs_spec.ndim() == 2 && rhs_spec.dims[0] == l.input_spec.dims[1],
                    "matmul inner dims mismatch");
            l.cls = OperatorClass::row_wise;
            l.output_spec = TensorSpec{{l.input_spec.dims[0], rhs_spec.dims[1]}};
            break;
        }
        case OpType::add: {
            TensorSpec rhs_spec;
            if (!l.rhs_name.empty()) {
                require(parent_specs.size() == 1, "add with rhs= takes one input");
                rhs_spec = weights.get(l.rhs_name).spec;
            } else {
                require(parent_specs.size() == 2, "add without rhs= takes two inputs");
                rhs_spec = parent_specs[1];
            }
            require(rhs_spec == l.input_spec, "add operand dims mismatch");
            l.cls = OperatorClass::row_wise;
            l.output_spec = l.input_spec;
            break;
        }
        case OpType::softmax:
            require(parent_specs.size() == 1, "softmax takes one input");
            l.cls = OperatorClass::global_op;
            l.output_spec = l.input_spec;
            break;
        case OpType::flatten: {
            require(parent_specs.size() == 1, "flatten takes one input");
            l.cls = OperatorClass::global_op;
            l.output_spec = TensorSpec{{1, uint32_t(l.input_spec.elem_count())}};
            break;
        }
    }

    // One-row matrix operations degenerate to global operators: the row
    // decomposition has nothing to split.
    if (l.cls == OperatorClass::row_wise && l.input_spec.dims[row_axis(l.input_spec)] == 1)
        l.cls = OperatorClass::global_op;

    if (l.is_global()) {
        l.partition_axis = row_axis(l.output_spec);
        l.operator_count = 1;
        return;
    }

    l.partition_axis = row_axis(l.output_spec);
    uint32_t extent = l.output_spec.dims[l.partition_axis];
    l.operator_count = (extent + group - 1) / group;
    // A single-slice layer cannot be split either; keep |OP|=1 <=> global.
    if (l.operator_count == 1) l.cls = OperatorClass::global_op;
}

// Parses the versioned model text format. Layer lines must appear in
// topological order with explicit parent references:
//
//   model v1
//   group 1
//   input 3 32 32
//   layer 0 conv2d parents=input out=8 kernel=3x3 stride=1x1 pad=1x1 dilation=1x1 weights=w0 bias=b0
//   layer 1 relu parents=0
//   layer 2 matmul parents=1 rhs=fc0
//   layer 3 add parents=1,2
inline ModelGraph build_model(const std::string& text, WeightStore weights) {
    ModelGraph g;
    g.weights = std::move(weights);
    std::istringstream is(text);
    std::string line;
    bool saw_header = false, saw_input = false;
    uint32_t next_id = 0;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "model") {
            std::string ver;
            ls >> ver;
            require(ver == "v1", "unsupported model version: " + ver);
            saw_header = true;
        } else if (tok == "group") {
            uint32_t gv = 0;
            require(bool(ls >> gv) && gv >= 1, "bad group value");
            g.group = gv;
        } else if (tok == "input") {
            TensorSpec spec;
            uint32_t d;
            while (ls >> d) spec.dims.push_back(d);
            spec.validate();
            g.input_spec = spec;
            saw_input = true;
        } else if (tok == "layer") {
            require(saw_header && saw_input, "layer before model/input header");
            Layer l;
            std::string opname;
            require(bool(ls >> l.id >> opname), "bad layer line: " + line);
            require(l.id == next_id, "layer ids must be dense and ordered");
            auto op = op_from_name(opname);
            require(op.has_value(), "unknown layer op: " + opname);
            l.op = *op;
            auto kv = detail::parse_kv(ls);
            require(kv.count("parents"), "layer missing parents=: " + line);
            std::vector<TensorSpec> parent_specs;
            {
                std::istringstream ps(kv["parents"]);
                std::string p;
                while (std::getline(ps, p, ',')) {
                    if (p == "input") {
                        parent_specs.push_back(g.input_spec);
                    } else {
                        uint32_t pid = uint32_t(std::stoul(p));
                        require(pid < l.id, "parent must precede layer " + std::to_string(l.id));
                        l.parents.push_back(pid);
                        parent_specs.push_back(g.layers[pid].output_spec);
                    }
                }
                require(!parent_specs.empty(), "layer needs parents");
                require(l.parents.empty() || l.parents.size() == parent_specs.size(),
                        "cannot mix raw input with layer parents");
            }
            if (l.op == OpType::conv2d || l.op == OpType::maxpool2d) {
                if (kv.count("kernel"))
                    std::tie(l.window.kh, l.window.kw) = detail::parse_pair(kv["kernel"], "kernel");
                if (kv.count("stride"))
                    std::tie(l.window.sh, l.window.sw) = detail::parse_pair(kv["stride"], "stride");
                if (kv.count("pad"))
                    std::tie(l.window.ph, l.window.pw) = detail::parse_pair(kv["pad"], "pad");
                if (kv.count("dilation"))
                    std::tie(l.window.dh, l.window.dw) =
                        detail::parse_pair(kv["dilation"], "dilation");
                if (kv.count("out")) l.window.out_channels = uint32_t(std::stoul(kv["out"]));
                if (kv.count("weights")) l.window.weights_name = kv["weights"];
                if (kv.count("bias")) l.window.bias_name = kv["bias"];
            }
            if (kv.count("rhs")) l.rhs_name = kv["rhs"];
            classify_layer(l, parent_specs, g.weights, g.group);
            g.layers.push_back(std::move(l));
            ++next_id;
        } else {
            throw InputError("unknown model directive: " + tok);
        }
    }
    g.finalize();
    return g;
}

inline std::string ModelGraph::canonical_text() const {
    std::ostringstream os;
    os << "model v1\n";
    os << "group " << group << "\n";
    os << "input";
    for (uint32_t d : input_spec.dims) os << " " << d;
    os << "\n";
    for (const Layer& l : layers) {
        os << "layer " << l.id << " " << op_name(l.op) << " parents=";
        if (l.parents.empty()) {
            os << "input";
        } else {
            for (size_t i = 0; i < l.parents.size(); ++i) {
                if (i) os << ",";
                os << l.parents[i];
            }
        }
        if (l.op == OpType::conv2d || l.op == OpType::maxpool2d) {
            os << " kernel=" << l.window.kh << "x" << l.window.kw;
            os << " stride=" << l.window.sh << "x" << l.window.sw;
            os << " pad=" << l.window.ph << "x" << l.window.pw;
            os << " dilation=" << l.window.dh << "x" << l.window.dw;
            if (l.op == OpType::conv2d) {
                os << " out=" << l.window.out_channels;
                os << " weights=" << l.window.weights_name;
                if (!l.window.bias_name.empty()) os << " bias=" << l.window.bias_name;
            }
        }
        if (!l.rhs_name.empty()) os << " rhs=" << l.rhs_name;
        os << "\n";
    }
    return os.str();
}

inline ModelGraph load_model(const std::string& model_path, const std::string& manifest_path,
                             const std::string& blob_path) {
    std::ifstream f(model_path);
    require(bool(f), "cannot read " + model_path);
    std::stringstream ss;
    ss << f.rdbuf();
    return build_model(ss.str(), WeightStore::load(manifest_path, blob_path));
}

// Partition axis plus per-operator slice ranges; errors on global layers.
inline std::pair<uint32_t, std::vector<Range>> partition_axis(const Layer& layer) {
    require(!layer.is_global(), "partition_axis on global layer " + std::to_string(layer.id));
    std::vector<Range> slices;
    slices.reserve(layer.operator_count);
    for (uint32_t i = 0; i < layer.operator_count; ++i) slices.push_back(layer.slice_range(i));
    return {layer.partition_axis, slices};
}

}  // namespace opsplit
