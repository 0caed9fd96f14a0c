#pragma once

// Schedule plans: per-layer device assignments (X robot / Y server, overlap
// allowed), derived transfer sets (M server->robot, N robot->server), and the
// completion-time recursion that models their execution under a given
// bandwidth.
//
// Plans are decoded from a compact genome: one contiguous split point per
// local-operator layer (robot takes the leading slice, server the rest) plus
// a device bit per global layer. Decoding repairs Pi-constrained layers by
// expanding the parent assignments of both devices until no forbidden
// transfer remains, so every genome yields a feasible plan; the expansion is
// exactly the halo-driven redundant computation.

#include "opsplit/netsim.hpp"

namespace opsplit {

struct LayerAssignment {
    OpSet x;  // robot operators
    OpSet y;  // server operators
    std::map<uint32_t, OpSet> m;  // received by robot, keyed by producer
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

struct SchedulePlan {
    uint64_t bucket_bps = 0;
    std::vector<LayerAssignment> layers;
    std::vector<double> t_robot, t_server;  // modeled completion times
    double objective = 0.0;                 // modeled robot-side finish incl. terminal transfer
    double modeled_energy = 0.0;
    uint64_t msg_count = 0;
    uint64_t total_bytes = 0;
    bool fallback = false;  // constraints forced the all-local plan

    // Final-layer operators the server must ship to the robot at the end.
    OpSet terminal_missing(const ModelGraph& g) const {
        const Layer& last = g.layers.back();
        return OpSet::all(last.operator_count).minus(layers.back().x);
    }
};

// ---- genome ----

struct Genome {
    std::vector<uint32_t> genes;  // local layer: split in [0, |OP|]; global: 1=robot, 0=server
};

inline uint32_t gene_max(const Layer& l) { return l.is_global() ? 1u : l.operator_count; }

inline Genome all_local_genome(const ModelGraph& g) {
    Genome gn;
    for (const Layer& l : g.layers) gn.genes.push_back(gene_max(l));
    return gn;
}

inline Genome all_server_genome(const ModelGraph& g) {
    Genome gn;
    gn.genes.assign(g.layers.size(), 0);
    return gn;
}

// Pipeline layer cut: layers with id < cut on the robot, the rest on the
// server. cut == layer count is the all-local plan, cut == 0 all-server.
inline Genome layer_cut_genome(const ModelGraph& g, uint32_t cut) {
    Genome gn;
    for (const Layer& l : g.layers) gn.genes.push_back(l.id < cut ? gene_max(l) : 0u);
    return gn;
}

// Decodes a genome into X/Y sets and derives M/N. `pi_constr` lists layers
// whose incoming transfers are forbidden; when the final layer's output
// exceeds the raw input it cannot be shipped back either, so the robot is
// forced to own it.
inline std::vector<LayerAssignment> decode_genome(const ModelGraph& g, const Genome& genome,
                                                  const std::set<uint32_t>& pi_constr,
                                                  bool final_output_oversized) {
    size_t n_layers = g.layers.size();
    invariant(genome.genes.size() == n_layers, "genome size mismatch");
    std::vector<LayerAssignment> plan(n_layers);

    for (const Layer& l : g.layers) {
        uint32_t gene = std::min(genome.genes[l.id], gene_max(l));
        if (l.is_global()) {
            if (gene >= 1)
                plan[l.id].x = OpSet::all(1);
            else
                plan[l.id].y = OpSet::all(1);
        } else {
            plan[l.id].x = OpSet::range({0, gene});
            plan[l.id].y = OpSet::range({gene, l.operator_count});
        }
    }

    uint32_t last = g.final_layer_id();
    if (final_output_oversized) {
        plan[last].x = OpSet::all(g.layers[last].operator_count);
        plan[last].y = OpSet{};
    }

    // Pi repair: forbidden transfers become redundant parent computation on
    // whichever device needs the data.
    for (uint32_t i = uint32_t(n_layers); i-- > 1;) {
        if (!pi_constr.count(i)) continue;
        const Layer& l = g.layers[i];
        for (const auto& [p, need] : parent_ops(g, l, plan[i].x)) {
            invariant(p != kRawInput, "pi-constrained layer reading raw input");
            plan[p].x = plan[p].x.union_with(need);
        }
        for (const auto& [p, need] : parent_ops(g, l, plan[i].y)) {
            invariant(p != kRawInput, "pi-constrained layer reading raw input");
            plan[p].y = plan[p].y.union_with(need);
        }
    }

    // Derive transfer sets from the final assignments.
    std::map<uint32_t, OpSet> x_all, y_all;
    for (const Layer& l : g.layers) {
        x_all[l.id] = plan[l.id].x;
        y_all[l.id] = plan[l.id].y;
    }
    for (const Layer& l : g.layers) {
        TransferSets ts = transfer_sets(g, l, plan[l.id].x, plan[l.id].y, x_all, y_all);
        plan[l.id].m = std::move(ts.m);
        plan[l.id].n = std::move(ts.n);
    }
    return plan;
}

// ---- completion-time model ----

struct PlanEvaluation {
    std::vector<double> t_robot, t_server;
    double objective = 0.0;
    std::vector<Interval> robot_compute;
    std::vector<Interval> robot_link_busy;  // either direction; the robot NIC is active
    uint64_t msg_count = 0;
    uint64_t total_bytes = 0;

    TimelineDurations durations() const {
        return timeline_from_intervals(robot_compute, robot_link_busy, 0.0, objective);
    }
};

// Models the per-layer completion times of a plan at a constant bandwidth.
// Layer i starts on a device once the device finished layer i-1 (one compute
// stream per device) and, when a transfer set is non-empty, once that
// aggregated message has arrived; each direction is one FIFO link. The
// objective is the robot-side finish including the terminal result transfer.
inline PlanEvaluation evaluate_plan(const ModelGraph& g, const CostProfile& profile,
                                    double bandwidth_bps,
                                    const std::vector<LayerAssignment>& plan,
                                    const CostParams& params = {}) {
    require(bandwidth_bps > 0, "bandwidth must be positive");
    size_t n_layers = g.layers.size();
    invariant(plan.size() == n_layers, "plan size mismatch");

    PlanEvaluation ev;
    ev.t_robot.assign(n_layers, 0.0);
    ev.t_server.assign(n_layers, 0.0);
    LinkState rs, sr;
    double robot_free = 0.0, server_free = 0.0;

    auto message = [&](const std::map<uint32_t, OpSet>& sets, LinkState& link,
                       auto&& source_avail) -> std::pair<bool, double> {
        uint64_t bytes = 0;
        double enqueue = 0.0;
        bool any = false;
        for (const auto& [p, ops] : sets) {
            if (ops.empty()) continue;
            any = true;
            bytes += profile.ops_bytes(g, p, ops);
            enqueue = std::max(enqueue, source_avail(p));
        }
        if (!any) return {false, 0.0};
        TransmitTiming t = transmit_enqueue(bytes, bandwidth_bps, link, enqueue, params);
        ev.robot_link_busy.push_back({t.start, t.occ_end});
        ev.msg_count += 1;
        ev.total_bytes += bytes + params.header_bytes;
        return {true, t.delivery};
    };

    for (const Layer& l : g.layers) {
        uint32_t i = l.id;
        const LayerAssignment& a = plan[i];

        auto [has_m, arrive_m] =
            message(a.m, sr, [&](uint32_t p) { return p == kRawInput ? 0.0 : ev.t_server[p]; });
        auto [has_n, arrive_n] =
            message(a.n, rs, [&](uint32_t p) { return p == kRawInput ? 0.0 : ev.t_robot[p]; });

        double start_r = has_m ? std::max(robot_free, arrive_m) : robot_free;
        double dur_r = compute_time({i, a.x}, profile, Device::robot);
        ev.t_robot[i] = start_r + dur_r;
        if (dur_r > 0) ev.robot_compute.push_back({start_r, ev.t_robot[i]});

        double start_s = has_n ? std::max(server_free, arrive_n) : server_free;
        double dur_s = compute_time({i, a.y}, profile, Device::server);
        ev.t_server[i] = start_s + dur_s;

        robot_free = ev.t_robot[i];
        server_free = ev.t_server[i];
    }

    ev.objective = ev.t_robot.back();
    const Layer& last = g.layers.back();
    OpSet missing = OpSet::all(last.operator_count).minus(plan.back().x);
    if (!missing.empty()) {
        uint64_t bytes = profile.ops_bytes(g, last.id, missing);
        TransmitTiming t = transmit_enqueue(bytes, bandwidth_bps, sr, ev.t_server.back(), params);
        ev.robot_link_busy.push_back({t.start, t.occ_end});
        ev.msg_count += 1;
        ev.total_bytes += bytes + params.header_bytes;
        ev.objective = std::max(ev.objective, t.delivery);
    }
    return ev;
}

// ---- plan validation ----

// Machine-checks a plan's feasibility; returns human-readable violations
// (empty means the plan is sound).
inline std::vector<std::string> check_plan(const ModelGraph& g, const CostProfile& profile,
                                           const SchedulePlan& plan) {
    std::vector<std::string> issues;
    auto pi = pi_constrained(g, profile);
    std::set<uint32_t> pi_bytes = pi_set(g, profile);
    if (plan.layers.size() != g.layers.size()) {
        issues.push_back("plan layer count mismatch");
        return issues;
    }
    std::map<uint32_t, OpSet> x_all, y_all;
    for (const Layer& l : g.layers) {
        x_all[l.id] = plan.layers[l.id].x;
        y_all[l.id] = plan.layers[l.id].y;
    }
    for (const Layer& l : g.layers) {
        const LayerAssignment& a = plan.layers[l.id];
        std::string at = " at layer " + std::to_string(l.id);
        if (!(a.x.union_with(a.y) == OpSet::all(l.operator_count)))
            issues.push_back("coverage violation" + at);
        TransferSets ts;
        try {
            ts = transfer_sets(g, l, a.x, a.y, x_all, y_all);
        } catch (const std::exception& e) {
            issues.push_back(std::string(e.what()));
            continue;
        }
        if (ts.m != a.m) issues.push_back("M set mismatch" + at);
        if (ts.n != a.n) issues.push_back("N set mismatch" + at);
        if (pi.count(l.id) && (!a.m_empty() || !a.n_empty()))
            issues.push_back("transfer into pi-constrained layer" + at);
        // Dependency closure: needed parents are owned or transferred.
        for (const auto& [p, need] : parent_ops(g, l, a.x)) {
            OpSet owned = p == kRawInput ? OpSet::all(g.producer_op_count(p)) : x_all[p];
            auto it = a.m.find(p);
            if (it != a.m.end()) owned = owned.union_with(it->second);
            if (!owned.contains_all(need)) issues.push_back("robot closure violation" + at);
        }
        for (const auto& [p, need] : parent_ops(g, l, a.y)) {
            OpSet owned = p == kRawInput ? OpSet{} : y_all[p];
            auto it = a.n.find(p);
            if (it != a.n.end()) owned = owned.union_with(it->second);
            if (!owned.contains_all(need)) issues.push_back("server closure violation" + at);
        }
    }
    if (pi_bytes.count(g.final_layer_id()) && !plan.terminal_missing(g).empty())
        issues.push_back("oversized final output left on server");
    return issues;
}

// ---- plan book ----

struct PlanBook {
    uint32_t model_checksum = 0;
    std::vector<SchedulePlan> plans;  // strictly increasing bucket_bps

    void validate() const {
        require(!plans.empty(), "plan book has no buckets");
        for (size_t i = 1; i < plans.size(); ++i)
            require(plans[i].bucket_bps > plans[i - 1].bucket_bps,
                    "plan book buckets must be strictly increasing");
    }

    // Largest bucket at or below the prediction; the lowest bucket when the
    // prediction is below all of them.
    size_t select_bucket(double predicted_bps) const {
        size_t pick = 0;
        for (size_t i = 0; i < plans.size(); ++i)
            if (double(plans[i].bucket_bps) <= predicted_bps) pick = i;
        return pick;
    }
};

namespace detail {

inline std::string runs_to_text(const OpSet& s) {
    if (s.empty()) return "-";
    std::string out;
    for (const Range& r : s.runs()) {
        if (!out.empty()) out += ",";
        out += std::to_string(r.lo) + ":" + std::to_string(r.hi);
    }
    return out;
}

inline OpSet runs_from_text(const std::string& s) {
    if (s == "-") return {};
    OpSet out;
    std::istringstream is(s);
    std::string piece;
    while (std::getline(is, piece, ',')) {
        size_t colon = piece.find(':');
        require(colon != std::string::npos, "bad run list: " + s);
        Range r{uint32_t(std::stoul(piece.substr(0, colon))),
                uint32_t(std::stoul(piece.substr(colon + 1)))};
        require(r.lo < r.hi, "bad run bounds: " + piece);
        out = out.union_with(OpSet::range(r));
    }
    return out;
}

}  // namespace detail

inline std::string planbook_to_text(const PlanBook& book) {
    std::ostringstream os;
    os << "planbook v1\n";
    os << "model_checksum " << format_hex32(book.model_checksum) << "\n";
    os << "buckets " << book.plans.size() << "\n";
    for (const SchedulePlan& p : book.plans) {
        os << "bucket " << p.bucket_bps << " objective " << format_sci(p.objective) << " energy "
           << format_sci(p.modeled_energy) << " messages " << p.msg_count << " bytes "
           << p.total_bytes << " fallback " << (p.fallback ? 1 : 0) << "\n";
        os << "t_robot";
        for (double t : p.t_robot) os << " " << format_sci(t);
        os << "\nt_server";
        for (double t : p.t_server) os << " " << format_sci(t);
        os << "\n";
        for (size_t i = 0; i < p.layers.size(); ++i) {
            const LayerAssignment& a = p.layers[i];
            os << "layer " << i << " x " << detail::runs_to_text(a.x) << " y "
               << detail::runs_to_text(a.y);
            for (const auto& [pid, s] : a.m)
                os << " m" << (pid == kRawInput ? std::string("raw") : std::to_string(pid)) << " "
                   << detail::runs_to_text(s);
            for (const auto& [pid, s] : a.n)
                os << " n" << (pid == kRawInput ? std::string("raw") : std::to_string(pid)) << " "
                   << detail::runs_to_text(s);
            os << "\n";
        }
        os << "endbucket\n";
    }
    return os.str();
}

inline std::string planbook_file_text(const PlanBook& book) {
    std::string body = planbook_to_text(book);
    return body + "checksum " + format_hex32(crc32_str(body)) + "\n";
}

inline PlanBook planbook_from_text(const std::string& file_text) {
    size_t cpos = file_text.rfind("checksum ");
    require(cpos != std::string::npos, "plan book missing checksum");
    std::string body = file_text.substr(0, cpos);
    std::string csum_line = file_text.substr(cpos);
    {
        std::istringstream cs(csum_line);
        std::string tok, hex;
        cs >> tok >> hex;
        require(hex == format_hex32(crc32_str(body)), "plan book checksum mismatch");
    }
    PlanBook book;
    std::istringstream is(body);
    std::string line;
    SchedulePlan cur;
    bool in_bucket = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "planbook") {
            std::string ver;
            ls >> ver;
            require(ver == "v1", "unsupported plan book version");
        } else if (tok == "model_checksum") {
            std::string hex;
            ls >> hex;
            book.model_checksum = uint32_t(std::stoul(hex, nullptr, 16));
        } else if (tok == "buckets") {
            // count is informational
        } else if (tok == "bucket") {
            require(!in_bucket, "nested bucket");
            cur = SchedulePlan{};
            std::string k;
            int fb = 0;
            require(bool(ls >> cur.bucket_bps >> k >> cur.objective), "bad bucket line");
            while (ls >> k) {
                if (k == "energy")
                    ls >> cur.modeled_energy;
                else if (k == "messages")
                    ls >> cur.msg_count;
                else if (k == "bytes")
                    ls >> cur.total_bytes;
                else if (k == "fallback")
                    ls >> fb;
            }
            cur.fallback = fb != 0;
            in_bucket = true;
        } else if (tok == "t_robot") {
            double v;
            while (ls >> v) cur.t_robot.push_back(v);
        } else if (tok == "t_server") {
            double v;
            while (ls >> v) cur.t_server.push_back(v);
        } else if (tok == "layer") {
            require(in_bucket, "layer outside bucket");
            size_t id;
            ls >> id;
            require(id == cur.layers.size(), "plan layers out of order");
            LayerAssignment a;
            std::string key, val;
            while (ls >> key >> val) {
                if (key == "x")
                    a.x = detail::runs_from_text(val);
                else if (key == "y")
                    a.y = detail::runs_from_text(val);
                else if (key[0] == 'm' || key[0] == 'n') {
                    std::string pid_s = key.substr(1);
                    uint32_t pid =
                        pid_s == "raw" ? kRawInput : uint32_t(std::stoul(pid_s));
                    if (key[0] == 'm')
                        a.m[pid] = detail::runs_from_text(val);
                    else
                        a.n[pid] = detail::runs_from_text(val);
                } else {
                    throw InputError("unknown plan field: " + key);
                }
            }
            cur.layers.push_back(std::move(a));
        } else if (tok == "endbucket") {
            require(in_bucket, "endbucket outside bucket");
            book.plans.push_back(std::move(cur));
            in_bucket = false;
        } else {
            throw InputError("unknown plan book directive: " + tok);
        }
    }
    require(!in_bucket, "unterminated bucket");
    book.validate();
    return book;
}

inline void save_planbook(const PlanBook& book, const std::string& path) {
    std::ofstream f(path);
    require(bool(f), "cannot write " + path);
    f << planbook_file_text(book);
}

inline PlanBook load_planbook(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return planbook_from_text(ss.str());
}

}  // namespace opsplit
