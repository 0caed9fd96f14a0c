#pragma once

// Row-major float32 tensors plus the sidecar weight-blob format
// (little-endian float32 binary + text manifest mapping name -> offset/dims).

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "opsplit/common.hpp"

namespace opsplit {

static_assert(std::endian::native == std::endian::little,
              "blob and wire formats assume a little-endian host");

struct TensorSpec {
    std::vector<uint32_t> dims;

    size_t ndim() const { return dims.size(); }

    size_t elem_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }

    size_t bytes() const { return elem_count() * sizeof(float); }

    void validate() const {
        require(!dims.empty(), "tensor spec needs at least one dim");
        for (uint32_t d : dims) require(d >= 1, "tensor dims must be >= 1");
    }

    bool operator==(const TensorSpec& o) const { return dims == o.dims; }
    bool operator!=(const TensorSpec& o) const { return !(*this == o); }

    std::string to_string() const {
        std::string s;
        for (size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s;
    }
};

struct Tensor {
    TensorSpec spec;
    std::vector<float> data;

    static Tensor zeros(TensorSpec s) {
        s.validate();
        Tensor t;
        t.spec = std::move(s);
        t.data.assign(t.spec.elem_count(), 0.0f);
        return t;
    }

    bool same_bytes(const Tensor& o) const {
        return spec == o.spec &&
               std::memcmp(data.data(), o.data.data(), data.size() * sizeof(float)) == 0;
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Tensor random_tensor(TensorSpec spec, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(spec));
    for (float& v : t.data) v = float(rng.uniform(lo, hi));
    return t;
}

// Slab view parameters for slicing a tensor along one axis: the tensor is
// (outer, axis_extent, inner) in row-major order.
struct AxisShape {
    size_t outer = 1;
    size_t extent = 1;
    size_t inner = 1;
};

inline AxisShape axis_shape(const TensorSpec& spec, uint32_t axis) {
    AxisShape s;
    for (uint32_t i = 0; i < axis; ++i) s.outer *= spec.dims[i];
    s.extent = spec.dims[axis];
    for (size_t i = axis + 1; i < spec.dims.size(); ++i) s.inner *= spec.dims[i];
    return s;
}

// Copies rows [lo, hi) along `axis` into a fresh tensor whose axis extent is hi-lo.
inline Tensor slice_axis(const Tensor& t, uint32_t axis, uint32_t lo, uint32_t hi) {
    invariant(axis < t.spec.ndim() && lo < hi && hi <= t.spec.dims[axis],
              "slice_axis: range out of bounds");
    AxisShape s = axis_shape(t.spec, axis);
    TensorSpec out_spec = t.spec;
    out_spec.dims[axis] = hi - lo;
    Tensor out = Tensor::zeros(out_spec);
    size_t rows = hi - lo;
    for (size_t o = 0; o < s.outer; ++o) {
        const float* src = t.data.data() + (o * s.extent + lo) * s.inner;
        float* dst = out.data.data() + o * rows * s.inner;
        std::memcpy(dst, src, rows * s.inner * sizeof(float));
    }
    return out;
}

// Writes rows [lo, hi) along `axis` of dst from src (whose axis extent is hi-lo).
inline void paste_axis(Tensor& dst, const Tensor& src, uint32_t axis, uint32_t lo, uint32_t hi) {
    invariant(axis < dst.spec.ndim() && lo < hi && hi <= dst.spec.dims[axis],
              "paste_axis: range out of bounds");
    invariant(src.spec.dims[axis] == hi - lo, "paste_axis: source extent mismatch");
    AxisShape s = axis_shape(dst.spec, axis);
    size_t rows = hi - lo;
    for (size_t o = 0; o < s.outer; ++o) {
        const float* from = src.data.data() + o * rows * s.inner;
        float* to = dst.data.data() + (o * s.extent + lo) * s.inner;
        std::memcpy(to, from, rows * s.inner * sizeof(float));
    }
}

// Named constant tensors (conv weights, matmul operands) loaded from the
// sidecar blob.
class WeightStore {
public:
    void put(const std::string& name, Tensor t) {
        require(!store_.count(name), "duplicate weight name: " + name);
        store_.emplace(name, std::move(t));
    }

    bool has(const std::string& name) const { return store_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = store_.find(name);
        require(it != store_.end(), "unknown weight name: " + name);
        return it->second;
    }

    const std::map<std::string, Tensor>& all() const { return store_; }

    // Manifest line format: name offset_floats dim0 dim1 ...
    std::string manifest_text() const {
        std::ostringstream os;
        os << "weights v1\n";
        size_t offset = 0;
        for (const auto& [name, t] : store_) {
            os << name << " " << offset;
            for (uint32_t d : t.spec.dims) os << " " << d;
            os << "\n";
            offset += t.spec.elem_count();
        }
        return os.str();
    }

    std::vector<float> blob() const {
        std::vector<float> out;
        for (const auto& [name, t] : store_)
            out.insert(out.end(), t.data.begin(), t.data.end());
        return out;
    }

    static WeightStore from_parts(const std::string& manifest, const std::vector<float>& blob) {
        WeightStore ws;
        std::istringstream is(manifest);
        std::string header;
        std::getline(is, header);
        require(header == "weights v1", "bad weight manifest header");
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            std::string name;
            size_t offset = 0;
            require(bool(ls >> name >> offset), "bad manifest line: " + line);
            TensorSpec spec;
            uint32_t d;
            while (ls >> d) spec.dims.push_back(d);
            spec.validate();
            require(offset + spec.elem_count() <= blob.size(),
                    "manifest entry exceeds blob: " + name);
            Tensor t = Tensor::zeros(spec);
            std::copy(blob.begin() + offset, blob.begin() + offset + spec.elem_count(),
                      t.data.begin());
            ws.put(name, std::move(t));
        }
        return ws;
    }

    void save(const std::string& manifest_path, const std::string& blob_path) const {
        std::ofstream mf(manifest_path);
        require(bool(mf), "cannot write " + manifest_path);
        mf << manifest_text();
        std::ofstream bf(blob_path, std::ios::binary);
        require(bool(bf), "cannot write " + blob_path);
        auto b = blob();
        bf.write(reinterpret_cast<const char*>(b.data()),
                 std::streamsize(b.size() * sizeof(float)));
    }

    static WeightStore load(const std::string& manifest_path, const std::string& blob_path) {
        std::ifstream mf(manifest_path);
        require(bool(mf), "cannot read " + manifest_path);
        std::stringstream ss;
        ss << mf.rdbuf();
        std::ifstream bf(blob_path, std::ios::binary | std::ios::ate);
        require(bool(bf), "cannot read " + blob_path);
        size_t bytes = size_t(bf.tellg());
        require(bytes % sizeof(float) == 0, "blob size not a multiple of 4");
        std::vector<float> blob(bytes / sizeof(float));
        bf.seekg(0);
        bf.read(reinterpret_cast<char*>(blob.data()), std::streamsize(bytes));
        return from_parts(ss.str(), blob);
    }

private:
    std::map<std::string, Tensor> store_;
};

// Standalone tensor blob I/O (inference inputs/outputs).
inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "cannot write " + path);
    std::string header = "tensor v1 " + t.spec.to_string() + "\n";
    f.write(header.data(), std::streamsize(header.size()));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "cannot read " + path);
    std::string header;
    std::getline(f, header);
    std::istringstream hs(header);
    std::string magic, version, dims_str;
    hs >> magic >> version >> dims_str;
    require(magic == "tensor" && version == "v1", "bad tensor header in " + path);
    TensorSpec spec;
    std::istringstream ds(dims_str);
    std::string piece;
    while (std::getline(ds, piece, 'x')) spec.dims.push_back(uint32_t(std::stoul(piece)));
    spec.validate();
    Tensor t = Tensor::zeros(spec);
    f.read(reinterpret_cast<char*>(t.data.data()),
           std::streamsize(t.data.size() * sizeof(float)));
    require(size_t(f.gcount()) == t.data.size() * sizeof(float), "tensor blob truncated: " + path);
    return t;
}

}  // namespace opsplit
