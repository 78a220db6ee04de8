#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stiffkin/pipeline.hpp"

namespace stiffkin {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json stage_to_json(const StageReport& s);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
nlohmann::json solver_config_to_json(const SolverConfig& cfg);
nlohmann::json report_to_json(const TrainReport& r);

/// stage,epoch,loss,learning_rate
std::string loss_curves_csv(const std::vector<StageReport>& stages);
/// id,truth,estimate,frozen
std::string coefficients_csv(const std::vector<CoefficientRow>& rows);

/// Loss against epoch on a log axis, one polyline per stage.
std::string svg_loss_curves(const std::vector<StageReport>& stages);
/// log10 of truth and estimate per trainable reaction, one marker pair each.
std::string svg_coefficient_scatter(const std::vector<CoefficientRow>& rows);
/// Normalised observations (markers) against a model trajectory (lines)
/// for the species in `columns`.
std::string svg_trajectory_overlay(const Trajectory& obs, const Trajectory& model, const std::vector<Eigen::Index>& columns,
                                   bool log_time, const std::string& title);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace stiffkin
