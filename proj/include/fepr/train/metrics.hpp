#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fepr::train {

struct EpisodeMetrics {
  int episode = 0;
  int steps = 0;
  double cumulative_reward = 0.0;
  double mar = 0.0;
  std::int64_t wall_ms = 0;

  bool operator==(const EpisodeMetrics&) const = default;
};

inline double mar_update(double prev_mar, double cr) { return 0.1 * cr + 0.9 * prev_mar; }

// Running moving-average reward; the first episode seeds it with its own CR.
class MarTracker {
 public:
  double push(double cr) {
    mar_ = count_++ == 0 ? cr : mar_update(mar_, cr);
    return mar_;
  }
  double value() const { return mar_; }
  int count() const { return count_; }

 private:
  double mar_ = 0.0;
  int count_ = 0;
};

inline constexpr const char* kMetricsHeader = "episode,steps,cumulative_reward,mar,wall_ms";

std::string metrics_row(const EpisodeMetrics& m);

// Writes the header on open and flushes each row, so a killed run keeps its progress.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);
  void append(const EpisodeMetrics& m);
  std::size_t rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::size_t rows_ = 0;
};

std::vector<EpisodeMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace fepr::train
