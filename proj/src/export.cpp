#include "hkflow/export.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace hkflow {

using nlohmann::json;

std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

double parse_real(std::string_view s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidArgument("trajectory CSV line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

json point_json(const Point<double>& p) { return std::vector<double>(p.data(), p.data() + p.size()); }

json rows_json(const Opinions<double>& m) {
    json out = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        out.push_back(std::move(row));
    }
    return out;
}

json state_json(const SystemState<double>& s) {
    return {{"time", s.time},
            {"opinions", rows_json(s.opinions)},
            {"weights", std::vector<double>(s.weights.data(), s.weights.data() + s.weights.size())}};
}

json index_list(const std::vector<Index>& v) { return std::vector<long long>(v.begin(), v.end()); }

} // namespace

void write_trajectory_csv(std::ostream& out, const std::vector<SystemState<double>>& samples) {
    const Index d = samples.empty() ? 1 : samples.front().d();
    std::string buf = "t,agent";
    for (Index c = 1; c <= d; ++c) buf += ",comp_" + std::to_string(c);
    buf += '\n';
    for (const auto& s : samples) {
        if (s.d() != d) throw InvalidArgument("write_trajectory_csv: samples differ in dimension");
        const std::string t = format_real(s.time);
        for (Index i = 0; i < s.n(); ++i) {
            buf += t;
            buf += ',';
            buf += std::to_string(i);
            for (Index c = 0; c < d; ++c) {
                buf += ',';
                buf += format_real(s.opinions(i, c));
            }
            buf += '\n';
        }
    }
    out << buf;
}

std::vector<SystemState<double>> read_trajectory_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument("trajectory CSV is empty");
    const auto header = split(line);
    if (header.size() < 3 || header[0] != "t" || header[1] != "agent")
        throw InvalidArgument("trajectory CSV header must start with t,agent,comp_1");
    const Index d = static_cast<Index>(header.size()) - 2;

    std::vector<SystemState<double>> out;
    std::vector<std::vector<double>> rows;
    double t = 0.0;
    const auto flush = [&] {
        if (rows.empty()) return;
        Opinions<double> x(static_cast<Index>(rows.size()), d);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (Index c = 0; c < d; ++c) x(static_cast<Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
        out.push_back(SystemState<double>::equal_weights(std::move(x), t));
        rows.clear();
    };
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (static_cast<Index>(cells.size()) != d + 2)
            throw InvalidArgument("trajectory CSV line " + std::to_string(lineno) + ": wrong column count");
        long long agent = -1;
        const auto res = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), agent);
        if (res.ec != std::errc() || agent < 0)
            throw InvalidArgument("trajectory CSV line " + std::to_string(lineno) + ": bad agent index");
        if (agent == 0) flush();
        if (agent != static_cast<long long>(rows.size()))
            throw InvalidArgument("trajectory CSV line " + std::to_string(lineno) + ": agents out of order");
        t = parse_real(cells[0], lineno);
        std::vector<double> row(static_cast<std::size_t>(d));
        for (Index c = 0; c < d; ++c) row[static_cast<std::size_t>(c)] = parse_real(cells[static_cast<std::size_t>(c) + 2], lineno);
        rows.push_back(std::move(row));
    }
    flush();
    return out;
}

void write_monitor_csv(std::ostream& out, const std::vector<MonitorSample<double>>& trace) {
    if (trace.empty()) {
        out << "t,mean_1,m2\n";
        return;
    }
    const auto& first = trace.front();
    std::string buf = "t";
    for (Index c = 1; c <= first.weighted_mean.size(); ++c) buf += ",mean_" + std::to_string(c);
    buf += ",m2";
    std::map<int, int> seen;
    for (const auto& m : first.dissipative)
        buf += ",M" + std::to_string(2 * m.r) + "_k" + std::to_string(++seen[m.r]);
    buf += '\n';
    for (const auto& s : trace) {
        buf += format_real(s.time);
        for (Index c = 0; c < s.weighted_mean.size(); ++c) buf += ',' + format_real(s.weighted_mean[c]);
        buf += ',' + format_real(s.m2);
        for (const auto& m : s.dissipative) buf += ',' + format_real(m.value);
        buf += '\n';
    }
    out << buf;
}

json to_json(const RobustnessReport& r) {
    json violations = json::array();
    for (const auto& v : r.generic.violations)
        violations.push_back(
            {{"clause", v.clause}, {"clusters", index_list(v.clusters)}, {"sphere", v.sphere}, {"residual", v.residual}});
    json sqrt2 = {{"holds", r.sqrt2.holds}, {"violating_pair", nullptr}};
    if (r.sqrt2.violating_pair) sqrt2["violating_pair"] = {r.sqrt2.violating_pair->first, r.sqrt2.violating_pair->second};
    json sweep = json::array();
    for (const auto& p : r.delta_sweep)
        sweep.push_back({{"delta", p.delta}, {"Delta", p.Delta}, {"branch_count", p.branch_count}});
    return {{"scmc", {{"holds", r.scmc.holds}, {"witness", index_list(r.scmc.witness)}, {"pairwise_only", r.scmc.pairwise_only}}},
            {"generic", {{"generic", r.generic.generic}, {"exhaustive", r.generic.exhaustive}, {"violations", violations}}},
            {"sqrt2", sqrt2},
            {"triple_intersection_free", r.triple_intersection_free},
            {"necessary_verdict", to_string(r.necessary_verdict)},
            {"sufficient_verdict", to_string(r.sufficient_verdict)},
            {"delta_sweep", sweep}};
}

json to_json(const DeltaSweep& s) {
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({{"delta", p.delta}, {"Delta", p.Delta}, {"branch_count", p.branch_count}});
    return {{"points", pts},
            {"strictly_decreasing", s.strictly_decreasing},
            {"extrapolated_limit", s.extrapolated_limit},
            {"ratios", s.ratios}};
}

json to_json(const RunRecord& r) {
    json j = {{"run_index", r.run_index}, {"seed_used", r.seed_used}, {"ok", r.ok}};
    if (!r.ok) {
        j["error"] = r.error;
        j["numerical_failure"] = r.numerical_failure;
    }
    j["terminated_by"] = to_string(r.terminated_by);
    j["event_count"] = r.event_count;
    j["accepted_steps"] = r.accepted_steps;
    j["equilibrium_class"] = to_string(r.equilibrium_class);
    if (r.final_state.n() > 0) j["final_state"] = state_json(r.final_state);
    if (r.clusters) {
        json blocks = json::array();
        for (const auto& b : r.clusters->partition.blocks()) blocks.push_back(index_list(b));
        j["clusters"] = {{"count", r.clusters->partition.size()},
                         {"centers", rows_json(r.clusters->centers)},
                         {"weights", std::vector<double>(r.clusters->block_weights.data(),
                                                         r.clusters->block_weights.data() +
                                                             r.clusters->block_weights.size())},
                         {"blocks", blocks}};
    }
    json probes = json::array();
    for (const auto& p : r.probes) probes.push_back({{"r", p.r}, {"k", point_json(p.k)}});
    j["monitor_probes"] = probes;
    j["monitor_samples"] = r.monitor_trace.size();
    if (r.pairwise_scmc)
        j["pairwise_scmc"] = {{"holds", r.pairwise_scmc->holds}, {"witness", index_list(r.pairwise_scmc->witness)}};
    if (r.verdicts) j["verdicts"] = to_json(*r.verdicts);
    if (r.category) j["category"] = to_string(*r.category);
    if (r.sweep_x0) j["sweep_x0"] = point_json(*r.sweep_x0);
    if (r.sweep) j["sweep"] = to_json(*r.sweep);
    if (!r.sweep_error.empty()) j["sweep_error"] = r.sweep_error;
    return j;
}

json to_json(const SummaryStats& s) {
    json hist = json::object();
    for (const auto& [k, c] : s.cluster_histogram) hist[std::to_string(k)] = c;
    json j = {{"runs", s.runs}, {"failed", s.failed}, {"cluster_histogram", hist}, {"categorized", s.categorized}};
    if (s.categorized) {
        j["count_pairwise_scmc"] = s.count_pairwise_scmc;
        j["count_sufficient_hypotheses"] = s.count_sufficient_hypotheses;
        j["count_neither"] = s.count_neither;
    }
    return j;
}

json summary_json(const ExperimentSpec& spec, const std::vector<RunRecord>& records, const SummaryStats& stats) {
    json runs = json::array();
    for (const auto& r : records) runs.push_back(to_json(r));
    return {{"format_version", 1}, {"spec", spec.to_json()}, {"runs", runs}, {"stats", to_json(stats)}};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    f.flush();
    if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void export_results(const std::filesystem::path& dir, const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                    const SummaryStats& stats) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (const auto& r : records) {
        if (!r.ok) continue;
        char stem[32];
        std::snprintf(stem, sizeof stem, "run_%04d", r.run_index);
        if (!r.trajectory.empty()) {
            std::ostringstream ss;
            write_trajectory_csv(ss, r.trajectory);
            write_text_file(dir / (std::string(stem) + "_trajectory.csv"), ss.str());
        }
        std::ostringstream ms;
        write_monitor_csv(ms, r.monitor_trace);
        write_text_file(dir / (std::string(stem) + "_monitors.csv"), ms.str());
    }
    write_text_file(dir / "summary.json", summary_json(spec, records, stats).dump(2) + "\n");
}

} // namespace hkflow
