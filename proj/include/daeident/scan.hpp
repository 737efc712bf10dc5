#pragma once

// Point classification over trajectories and consistent grids, with CSV and
// SVG output.  Points are evaluated by a worker pool and reported in input
// order regardless of completion order.

#include <optional>
#include <string>
#include <vector>

#include "daeident/scenarios.hpp"

namespace daeident {

struct ClassifiedPoint {
  Eigen::VectorXd state;
  double time = 0.0;
  bool satisfied = false;
  int rank_deficit = 0;  // required - rank_full
  bool ill_conditioned = false;
  int mu = 0, nu = 0;
};

struct ScanResult {
  std::vector<ClassifiedPoint> points;
  std::string scenario, theta_set, sensor, mode, provenance;
  std::vector<std::string> state_names;

  int satisfied_count() const;
};

struct GridAxis {
  std::string name;
  double lo = 0.0, hi = 1.0;
  int count = 2;
};

// "x1=0:1:50,x2=340:380:50"
std::vector<GridAxis> parse_grid_spec(const std::string& spec);

struct ScanOptions {
  std::string mode = "identifiability";  // or "observability"
  std::optional<std::string> grid;       // default: the scenario trajectory
  int subsample = 1;                     // keep every k-th trajectory point
  int jobs = 1;
  RankOptions rank;
  SimOptions sim;
  std::optional<int> linear_mu;          // linear fast path order (default n-1)
};

ScanResult scan_scenario(const Scenario& sc, const std::string& theta_set,
                         const std::string& sensor, const ScanOptions& opts);

void write_scan_csv(const ScanResult& r, const std::string& path);
void write_scan_meta(const ScanResult& r, const std::string& path);

// Two-color scatter of the classified points projected on the (xi, xj)
// state coordinates; trajectory points additionally connected in time order.
void write_scan_svg(const ScanResult& r, int xi, int xj, const std::string& path);

}  // namespace daeident
