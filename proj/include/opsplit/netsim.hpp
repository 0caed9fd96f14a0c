#pragma once

// Deterministic link simulation: bandwidth traces sampled every 0.1 s
// (record/playback plus synthetic generators), piecewise-constant transfer
// integration with per-direction FIFO queues, and the EWMA bandwidth
// predictor used for plan selection.

#include "opsplit/cost.hpp"

namespace opsplit {

constexpr double kTraceIntervalS = 0.1;

struct TraceExhausted : InputError {
    explicit TraceExhausted(const std::string& msg) : InputError(msg) {}
};

struct BandwidthTrace {
    std::string name;
    std::vector<std::pair<double, double>> samples;  // (t offset seconds, bps)

    void validate() const {
        require(!samples.empty(), "trace has no samples");
        double prev = -1.0;
        for (const auto& [t, bw] : samples) {
            require(bw >= 0.0, "trace bandwidth must be >= 0");
            require(t > prev, "trace timestamps must be strictly increasing");
            if (prev >= 0.0)
                require(std::abs((t - prev) - kTraceIntervalS) < 1e-9,
                        "trace samples must be spaced 0.1 s apart");
            prev = t;
        }
    }

    double end_time() const { return samples.back().first + kTraceIntervalS; }

    // Zero-order hold of the most recent sample.
    double bw_at(double t) const {
        if (t <= samples.front().first) return samples.front().second;
        size_t lo = 0, hi = samples.size();
        while (lo + 1 < hi) {
            size_t mid = (lo + hi) / 2;
            if (samples[mid].first <= t)
                lo = mid;
            else
                hi = mid;
        }
        return samples[lo].second;
    }

    // Mean and relative standard deviation over samples in [0, horizon).
    std::pair<double, double> mean_rsd(double horizon) const {
        double sum = 0.0, sq = 0.0;
        size_t n = 0;
        for (const auto& [t, bw] : samples) {
            if (t >= horizon) break;
            sum += bw;
            sq += bw * bw;
            ++n;
        }
        if (n == 0) return {0.0, 0.0};
        double mean = sum / double(n);
        double var = std::max(0.0, sq / double(n) - mean * mean);
        return {mean, mean > 0 ? std::sqrt(var) / mean : 0.0};
    }
};

inline BandwidthTrace constant_trace(double bps, double duration_s) {
    require(bps >= 0 && duration_s > 0, "bad constant trace parameters");
    BandwidthTrace tr;
    tr.name = "constant";
    size_t n = size_t(std::ceil(duration_s / kTraceIntervalS));
    for (size_t i = 0; i < n; ++i) tr.samples.emplace_back(double(i) * kTraceIntervalS, bps);
    tr.validate();
    return tr;
}

namespace detail {

// AR(1) process around a mean plus an on/off outage process.
inline BandwidthTrace fluctuating_trace(const char* name, double mean_bps, double sd_bps,
                                        double dip_prob_per_sample, double dip_mean_samples,
                                        double duration_s, uint64_t seed) {
    BandwidthTrace tr;
    tr.name = name;
    Rng rng(seed);
    size_t n = size_t(std::ceil(duration_s / kTraceIntervalS));
    double level = mean_bps;
    const double rho = 0.9;
    size_t dip_left = 0;
    for (size_t i = 0; i < n; ++i) {
        level = mean_bps + rho * (level - mean_bps) +
                sd_bps * std::sqrt(1.0 - rho * rho) * rng.gaussian();
        double bw = std::max(level, 1e6);
        if (dip_left > 0) {
            bw = rng.uniform(0.0, 3e6);
            --dip_left;
        } else if (dip_prob_per_sample > 0 && rng.uniform01() < dip_prob_per_sample) {
            dip_left = size_t(std::max(1.0, std::round(rng.uniform(0.5, 1.5) * dip_mean_samples)));
        }
        tr.samples.emplace_back(double(i) * kTraceIntervalS, bw);
    }
    tr.validate();
    return tr;
}

}  // namespace detail

// Indoor-like conditions: ~93 Mbps average, moderate fluctuation.
inline BandwidthTrace indoor_trace(double duration_s, uint64_t seed) {
    return detail::fluctuating_trace("indoor_like", 93e6, 10e6, 0.0, 0.0, duration_s, seed);
}

// Outdoor-like conditions: ~73 Mbps average with occasional near-zero dips.
// Dip occupancy is ~2.5% of samples, so the base level sits slightly above
// the target mean to compensate.
inline BandwidthTrace outdoor_trace(double duration_s, uint64_t seed) {
    return detail::fluctuating_trace("outdoor_like", 74.8e6, 12e6, 0.008, 3.0, duration_s, seed);
}

inline BandwidthTrace synth_trace(const std::string& kind, double duration_s, uint64_t seed,
                                  double constant_bps = 80e6) {
    if (kind == "constant") return constant_trace(constant_bps, duration_s);
    if (kind == "indoor_like") return indoor_trace(duration_s, seed);
    if (kind == "outdoor_like") return outdoor_trace(duration_s, seed);
    throw InputError("unknown trace kind: " + kind);
}

// Trace file: one "t_seconds bandwidth_bps" pair per line, '#' comments.
inline BandwidthTrace load_trace(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "cannot read " + path);
    BandwidthTrace tr;
    tr.name = path;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double t, bw;
        require(bool(ls >> t >> bw), "bad trace line: " + line);
        tr.samples.emplace_back(t, bw);
    }
    tr.validate();
    return tr;
}

inline void save_trace(const BandwidthTrace& tr, const std::string& path) {
    std::ofstream f(path);
    require(bool(f), "cannot write " + path);
    f << "# bandwidth trace: " << tr.name << "\n";
    for (const auto& [t, bw] : tr.samples)
        f << format_fixed(t, 1) << " " << format_fixed(bw, 0) << "\n";
}

enum class Direction : uint8_t { robot_to_server, server_to_robot };

inline const char* direction_name(Direction d) {
    return d == Direction::robot_to_server ? "rs" : "sr";
}

// Simulated reliable link over a bandwidth trace. Transfers integrate bytes
// across the piecewise-constant trace; zero-bandwidth intervals stall
// progress but never drop data. One FIFO queue per direction.
class SimLink {
public:
    SimLink(const BandwidthTrace& trace, double latency_s)
        : trace_(&trace), latency_(latency_s) {}

    // Queues `bytes` at `enqueue_time`; returns the timing and records the
    // busy interval for the direction.
    TransmitTiming transfer(Direction dir, uint64_t bytes, double enqueue_time) {
        require(bytes > 0, "transfer needs > 0 bytes");
        LinkState& st = dir == Direction::robot_to_server ? rs_ : sr_;
        TransmitTiming t;
        t.start = std::max(enqueue_time, st.tail);
        t.occ_end = integrate(t.start, double(bytes) * 8.0);
        t.delivery = t.occ_end + latency_;
        st.tail = t.occ_end;
        busy(dir).push_back({t.start, t.occ_end});
        return t;
    }

    double latency() const { return latency_; }
    const BandwidthTrace& trace() const { return *trace_; }

    std::vector<Interval>& busy(Direction dir) {
        return dir == Direction::robot_to_server ? rs_busy_ : sr_busy_;
    }

private:
    // Time at which `bits` finish serializing when started at `t0`.
    double integrate(double t0, double bits) const {
        double t = t0;
        double remaining = bits;
        const auto& s = trace_->samples;
        while (remaining > 1e-12) {
            if (t >= trace_->end_time() - 1e-12)
                throw TraceExhausted("trace exhausted at t=" + format_fixed(t, 3));
            // Segment containing t.
            size_t idx = std::min(size_t(std::max(0.0, t / kTraceIntervalS)), s.size() - 1);
            while (idx + 1 < s.size() && s[idx + 1].first <= t + 1e-12) ++idx;
            double seg_end = idx + 1 < s.size() ? s[idx + 1].first : trace_->end_time();
            double bw = s[idx].second;
            if (bw <= 0.0) {
                t = seg_end;  // outage: stall until bandwidth returns
                continue;
            }
            double capacity = bw * (seg_end - t);
            if (capacity >= remaining) return t + remaining / bw;
            remaining -= capacity;
            t = seg_end;
        }
        return t;
    }

    const BandwidthTrace* trace_;
    double latency_;
    LinkState rs_, sr_;
    std::vector<Interval> rs_busy_, sr_busy_;
};

// EWMA over observed bandwidth samples; primes on the first sample.
struct EwmaPredictor {
    double alpha = 0.3;
    bool primed = false;
    double value = 0.0;

    void feed(double sample_bps) {
        value = primed ? alpha * sample_bps + (1.0 - alpha) * value : sample_bps;
        primed = true;
    }

    double predict() const {
        require(primed, "predictor has no samples");
        return value;
    }
};

}  // namespace opsplit
