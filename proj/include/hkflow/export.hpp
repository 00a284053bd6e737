#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "hkflow/experiment.hpp"

namespace hkflow {

/// File could not be read or written; the message names the path.
class IoError : public Error {
public:
    using Error::Error;
};

/// Shortest decimal that parses back to the same double.
std::string format_real(double v);

/// Header `t,agent,comp_1..comp_d`, then one row per sample per agent.
void write_trajectory_csv(std::ostream& out, const std::vector<SystemState<double>>& samples);

/// Inverse of write_trajectory_csv. Weights are not stored in the file and come back as 1.
/// A new sample starts at every row with agent 0.
std::vector<SystemState<double>> read_trajectory_csv(std::istream& in);

/// Header `t,mean_1..mean_d,m2` then one `M<2r>_k<j>` column per probe.
void write_monitor_csv(std::ostream& out, const std::vector<MonitorSample<double>>& trace);

nlohmann::json to_json(const RunRecord& r);
nlohmann::json to_json(const SummaryStats& s);
nlohmann::json to_json(const RobustnessReport& r);
nlohmann::json to_json(const DeltaSweep& s);
nlohmann::json summary_json(const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                            const SummaryStats& stats);

/// Writes `summary.json` and, per successful run r, `run_<r>_trajectory.csv` (if kept)
/// and `run_<r>_monitors.csv` into `dir` (created if missing).
void export_results(const std::filesystem::path& dir, const ExperimentSpec& spec,
                    const std::vector<RunRecord>& records, const SummaryStats& stats);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace hkflow
