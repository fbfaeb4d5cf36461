#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

// Evaluation report schema: one JSON object per scene followed by one
// aggregate object, all tagged with a schema version. PSNR of identical
// images is +infinity, rendered as the string "inf".

namespace olc {

inline constexpr const char* kEvalSchema = "olchdr-eval/1";

inline nlohmann::json render_psnr_field(double v) {
  if (std::isinf(v)) return nlohmann::json("inf");
  return nlohmann::json(v);
}

inline nlohmann::json eval_report_line(const std::string& scene_id,
                                       double psnr_mu, double psnr_linear,
                                       double ssim_mu, double ssim_linear) {
  return nlohmann::json{{"schema", kEvalSchema},
                        {"scene", scene_id},
                        {"psnr_mu", render_psnr_field(psnr_mu)},
                        {"psnr_linear", render_psnr_field(psnr_linear)},
                        {"ssim_mu", ssim_mu},
                        {"ssim_linear", ssim_linear}};
}

inline nlohmann::json eval_report_aggregate(int scenes, double mean_psnr_mu,
                                            double mean_psnr_linear,
                                            double mean_ssim_mu,
                                            double mean_ssim_linear) {
  return nlohmann::json{{"schema", kEvalSchema},
                        {"aggregate", true},
                        {"scenes", scenes},
                        {"mean_psnr_mu", mean_psnr_mu},
                        {"mean_psnr_linear", mean_psnr_linear},
                        {"mean_ssim_mu", mean_ssim_mu},
                        {"mean_ssim_linear", mean_ssim_linear}};
}

}  // namespace olc
