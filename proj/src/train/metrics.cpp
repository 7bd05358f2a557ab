#include "fepr/train/metrics.hpp"

#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "fepr/errors.hpp"

namespace fepr::train {

std::string metrics_row(const EpisodeMetrics& m) {
  // {} prints the shortest representation that round-trips
  return fmt::format("{},{},{},{},{}", m.episode, m.steps, m.cumulative_reward, m.mar, m.wall_ms);
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw ConfigError("cannot write metrics file " + path.string());
  out_ << kMetricsHeader << "\n";
  out_.flush();
}

void MetricsCsv::append(const EpisodeMetrics& m) {
  out_ << metrics_row(m) << "\n";
  out_.flush();
  if (!out_) throw std::runtime_error("metrics write failed");
  ++rows_;
}

std::vector<EpisodeMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw ConfigError("unexpected metrics header in " + path.string());
  std::vector<EpisodeMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    EpisodeMetrics m;
    char c1, c2, c3, c4;
    if (!(ss >> m.episode >> c1 >> m.steps >> c2 >> m.cumulative_reward >> c3 >> m.mar >> c4 >> m.wall_ms)) {
      throw ConfigError("malformed metrics row: " + line);
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace fepr::train
