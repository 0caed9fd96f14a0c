#pragma once

// Compute/transmit time estimators, the Pi constraint set (layers whose
// output exceeds the raw input; no cross-device transfers there), and the
// robot energy model.

#include <chrono>
#include <set>

#include "opsplit/lop.hpp"

namespace opsplit {

enum class Device : uint8_t { robot, server };

inline const char* device_name(Device d) { return d == Device::robot ? "robot" : "server"; }

struct CostProfile {
    std::vector<double> robot_op_time;    // seconds per operator, per layer
    std::vector<double> server_op_time;
    std::vector<uint64_t> out_bytes_per_op;  // uniform per layer (last slice may be smaller)
    std::vector<uint64_t> out_row_bytes;     // exact bytes per partition-axis row
    uint64_t raw_input_bytes = 0;
    uint64_t raw_row_bytes = 0;

    static CostProfile from_graph(const ModelGraph& g) {
        CostProfile p;
        size_t n = g.layers.size();
        p.robot_op_time.assign(n, 0.0);
        p.server_op_time.assign(n, 0.0);
        p.out_bytes_per_op.assign(n, 0);
        p.out_row_bytes.assign(n, 0);
        for (const Layer& l : g.layers) {
            uint64_t rb = row_bytes(l.output_spec, l.partition_axis);
            p.out_row_bytes[l.id] = rb;
            p.out_bytes_per_op[l.id] = rb * l.slice_range(0).len();
        }
        p.raw_input_bytes = g.input_spec.bytes();
        p.raw_row_bytes = row_bytes(g.input_spec, row_axis(g.input_spec));
        return p;
    }

    const std::vector<double>& op_time(Device d) const {
        return d == Device::robot ? robot_op_time : server_op_time;
    }

    // Exact payload bytes of an operator set of `producer` (row coverage).
    uint64_t ops_bytes(const ModelGraph& g, uint32_t producer, const OpSet& ops) const {
        if (ops.empty()) return 0;
        uint64_t rb = producer == kRawInput ? raw_row_bytes : out_row_bytes[producer];
        uint64_t rows = 0;
        for (const Range& run : ops.runs())
            rows += g.producer_rows_of_ops(producer, run).len();
        return rows * rb;
    }
};

// Declared per-operator costs, identical across layers; the deterministic
// substitute for measurement in tests and simulations.
inline CostProfile synthetic_profile(const ModelGraph& g, double robot_seconds_per_op,
                                     double server_speedup) {
    require(robot_seconds_per_op > 0 && server_speedup > 0, "synthetic profile needs > 0 costs");
    CostProfile p = CostProfile::from_graph(g);
    for (size_t i = 0; i < g.layers.size(); ++i) {
        p.robot_op_time[i] = robot_seconds_per_op;
        p.server_op_time[i] = robot_seconds_per_op / server_speedup;
    }
    return p;
}

// Measures median whole-layer wall time over `repetitions` runs with random
// inputs, divided by the layer's operator count.
inline std::vector<double> profile_model(const ModelGraph& g, uint32_t repetitions,
                                         uint64_t seed = 1) {
    require(repetitions >= 1, "profile needs >= 1 repetition");
    Rng rng(seed);
    std::vector<double> per_op(g.layers.size(), 0.0);
    // Random full activations per producer, shared across repetitions.
    std::vector<Tensor> acts(g.layers.size());
    Tensor input = random_tensor(g.input_spec, rng);
    for (const Layer& l : g.layers) {
        std::vector<Tensor> ins;
        if (l.parents.empty())
            ins.push_back(input);
        else
            for (uint32_t p : l.parents) ins.push_back(acts[p]);
        std::vector<double> samples;
        samples.reserve(repetitions);
        Tensor out;
        for (uint32_t r = 0; r < repetitions; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            out = run_layer_full(g, l, ins);
            auto t1 = std::chrono::steady_clock::now();
            samples.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(samples.begin(), samples.end());
        double median = samples[samples.size() / 2];
        per_op[l.id] = median / double(l.operator_count);
        acts[l.id] = std::move(out);
    }
    return per_op;
}

// |X| * per-operator time for that layer and device; empty set costs nothing.
inline double compute_time(const OperatorSet& x, const CostProfile& profile, Device device) {
    if (x.ops.empty()) return 0.0;
    require(x.layer_id < profile.op_time(device).size(), "layer id out of profile range");
    return double(x.ops.size()) * profile.op_time(device)[x.layer_id];
}

struct CostParams {
    double latency_s = 1e-3;      // fixed per-message latency
    uint64_t header_bytes = 64;   // frame header charged per message
};

// One direction of the link; messages serialize FIFO behind `tail`.
struct LinkState {
    double tail = 0.0;
};

struct TransmitTiming {
    double start = 0.0;      // serialization begins (after FIFO wait)
    double occ_end = 0.0;    // link released
    double delivery = 0.0;   // payload available at the receiver
};

// Queues `payload_bytes` (+header) at `now`; returns the full timing and
// advances the link tail. Latency is propagation: it delays delivery but does
// not occupy the link.
inline TransmitTiming transmit_enqueue(uint64_t payload_bytes, double bandwidth_bps,
                                       LinkState& link, double now,
                                       const CostParams& params = {}) {
    require(bandwidth_bps > 0, "bandwidth must be positive");
    TransmitTiming t;
    if (payload_bytes == 0) {
        t.start = t.occ_end = t.delivery = now;
        return t;
    }
    uint64_t bytes = payload_bytes + params.header_bytes;
    t.start = std::max(now, link.tail);
    t.occ_end = t.start + double(bytes) * 8.0 / bandwidth_bps;
    t.delivery = t.occ_end + params.latency_s;
    link.tail = t.occ_end;
    return t;
}

// Estimated seconds until delivery, seen from `now` (FIFO wait included).
inline double transmit_time(uint64_t payload_bytes, double bandwidth_bps, LinkState& link,
                            double now, const CostParams& params = {}) {
    return transmit_enqueue(payload_bytes, bandwidth_bps, link, now, params).delivery - now;
}

// Layers whose full output is strictly larger than the raw model input.
inline std::set<uint32_t> pi_set(const ModelGraph& g, const CostProfile& profile) {
    std::set<uint32_t> pi;
    for (const Layer& l : g.layers)
        if (l.output_spec.bytes() > profile.raw_input_bytes) pi.insert(l.id);
    return pi;
}

// Pi members whose incoming transfers are actually constrained. Layers that
// read the raw input are exempt: their only incoming transfer is the raw
// input itself, which is what the Pi byte comparison is measured against.
inline std::set<uint32_t> pi_constrained(const ModelGraph& g, const CostProfile& profile) {
    std::set<uint32_t> pi = pi_set(g, profile);
    for (const Layer& l : g.layers)
        if (l.parents.empty()) pi.erase(l.id);
    return pi;
}

struct PowerStates {
    double p_inference = 13.35;     // W, computing
    double p_transmission = 4.25;   // W, transmitting while otherwise idle
    double p_standby = 4.04;        // W, no work
    double p_nic_idle = 0.21;       // W, NIC draw added while compute overlaps transmit

    void validate() const {
        require(p_inference > 0 && p_transmission > 0 && p_standby > 0 && p_nic_idle > 0,
                "power states must be positive");
    }
};

// Robot-side state durations of one inference. compute includes any overlapped
// transmission window; compute + transmit_exclusive + idle = wall clock.
struct TimelineDurations {
    double compute = 0.0;
    double transmit_exclusive = 0.0;
    double idle = 0.0;
    double transmit_overlapped = 0.0;
};

inline double energy_per_inference(const TimelineDurations& t, const PowerStates& p) {
    require(t.compute >= 0 && t.transmit_exclusive >= 0 && t.idle >= 0 &&
                t.transmit_overlapped >= 0,
            "durations must be non-negative");
    return p.p_inference * t.compute + p.p_transmission * t.transmit_exclusive +
           p.p_standby * t.idle + p.p_nic_idle * t.transmit_overlapped;
}

// Durations from robot compute/transmit busy intervals over [t0, t0 + wall].
inline TimelineDurations timeline_from_intervals(std::vector<Interval> compute,
                                                 std::vector<Interval> transmit, double t0,
                                                 double wall) {
    auto c = merge_intervals(std::move(compute));
    auto x = merge_intervals(std::move(transmit));
    TimelineDurations t;
    t.compute = total_length(c);
    t.transmit_overlapped = intersection_length(c, x);
    t.transmit_exclusive = total_length(x) - t.transmit_overlapped;
    t.idle = std::max(0.0, wall - t.compute - t.transmit_exclusive);
    (void)t0;
    return t;
}

// ---- profile file format (versioned text) ----
//
//   profile v1
//   layers <N>
//   layer <id> robot <s> server <s> out_bytes_per_op <B>
//   raw_input_bytes <B>

inline std::string profile_to_text(const CostProfile& p) {
    std::ostringstream os;
    os << "profile v1\n";
    os << "layers " << p.robot_op_time.size() << "\n";
    for (size_t i = 0; i < p.robot_op_time.size(); ++i)
        os << "layer " << i << " robot " << format_sci(p.robot_op_time[i]) << " server "
           << format_sci(p.server_op_time[i]) << " out_bytes_per_op " << p.out_bytes_per_op[i]
           << "\n";
    os << "raw_input_bytes " << p.raw_input_bytes << "\n";
    return os.str();
}

// Parses a profile file; byte fields are re-derived from the graph so a
// stale file cannot desynchronize transfer accounting.
inline CostProfile profile_from_text(const std::string& text, const ModelGraph& g) {
    CostProfile p = CostProfile::from_graph(g);
    std::istringstream is(text);
    std::string line;
    bool saw_header = false;
    size_t n_layers = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "profile") {
            std::string ver;
            ls >> ver;
            require(ver == "v1", "unsupported profile version");
            saw_header = true;
        } else if (tok == "layers") {
            ls >> n_layers;
            require(n_layers == g.layers.size(), "profile layer count mismatch");
        } else if (tok == "layer") {
            size_t id;
            std::string k1, k2, k3;
            double robot_s, server_s;
            uint64_t bytes;
            require(bool(ls >> id >> k1 >> robot_s >> k2 >> server_s >> k3 >> bytes) &&
                        k1 == "robot" && k2 == "server" && k3 == "out_bytes_per_op",
                    "bad profile line: " + line);
            require(id < g.layers.size(), "profile layer id out of range");
            require(robot_s >= 0 && server_s >= 0, "profile times must be >= 0");
            p.robot_op_time[id] = robot_s;
            p.server_op_time[id] = server_s;
        } else if (tok == "raw_input_bytes") {
            uint64_t b;
            ls >> b;
            require(b == p.raw_input_bytes, "profile raw input bytes mismatch");
        } else {
            throw InputError("unknown profile directive: " + tok);
        }
    }
    require(saw_header, "missing profile header");
    return p;
}

// Merge per-device profile files: take each side's times where nonzero.
inline CostProfile merge_profiles(const CostProfile& robot_side, const CostProfile& server_side) {
    CostProfile p = robot_side;
    require(p.server_op_time.size() == server_side.server_op_time.size(),
            "profile merge size mismatch");
    for (size_t i = 0; i < p.server_op_time.size(); ++i) {
        if (server_side.server_op_time[i] > 0) p.server_op_time[i] = server_side.server_op_time[i];
        if (p.robot_op_time[i] == 0) p.robot_op_time[i] = server_side.robot_op_time[i];
    }
    return p;
}

}  // namespace opsplit
