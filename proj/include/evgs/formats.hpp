#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "evgs/contrast_max.hpp"
#include "evgs/event_core.hpp"
#include "evgs/flow_adapter.hpp"
#include "evgs/image.hpp"
#include "evgs/nn.hpp"
#include "evgs/supervision.hpp"
#include "evgs/synthetic.hpp"

namespace evgs {

namespace fs = std::filesystem;

// Events. CSV is `t_us,x,y,p` after a `# width=W height=H t_begin=A t_end=B` line; the binary
// variant is a small header followed by packed little-endian records (u64 t, u16 x, u16 y, i8 p).
// The extension picks the variant: ".csv" or anything else for binary.
void write_events(const fs::path& path, const EventStream& stream);
EventStream read_events(const fs::path& path);

// Checkpoints: 8-byte magic, u64 header length, JSON header, then every tensor as little-endian
// float32 in column-major order. The header lists tensor shapes.
void write_checkpoint(const fs::path& path, nlohmann::json header, std::span<const nn::Param* const> tensors);
/// Fills the given tensors, which must match the stored shapes; returns the header.
nlohmann::json read_checkpoint(const fs::path& path, std::span<nn::Param* const> tensors);
nlohmann::json read_checkpoint_header(const fs::path& path);

/// Rounds values to the nearest float32 so that in-memory state matches what a checkpoint holds.
void quantize_float32(std::span<nn::Param* const> tensors);
void quantize_float32(SceneModel& model);

void save_predictor(const fs::path& path, const TiledFlowPredictor& predictor);
TiledFlowPredictor load_predictor(const fs::path& path);
/// The header records the base checksum; loading against a different base is a config error.
void save_adapter(const fs::path& path, const nn::LoraAdapter& adapter, const TiledFlowPredictor& base);
nn::LoraAdapter load_adapter(const fs::path& path, const TiledFlowPredictor& base);
void save_model(const fs::path& path, const SceneModel& model);
SceneModel load_model(const fs::path& path);

// Scene JSON: intrinsics, background, Gaussians (mu, scale, quaternion wxyz, opacity, color),
// world-to-camera keyframe poses with timestamps, the scripted oscillation and frame timing.
nlohmann::json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
void save_scene(const fs::path& path, const SceneSpec& scene);
SceneSpec load_scene(const fs::path& path);

// Images. 3 channels go to binary PPM (P6), 1 channel to PGM (P5). Values are clamped to [0, 1]
// and encoded with 1/gamma; gamma = 1 writes them as is.
void write_pnm(const fs::path& path, const Image& img, double gamma = 2.2);
Image read_pnm(const fs::path& path, double gamma = 2.2);

/// Single-channel float map (PFM, "Pf"), rows stored bottom to top.
void write_pfm(const fs::path& path, const Image& plane);
Image read_pfm(const fs::path& path);
/// Depth normalized to [0, 1] with near = bright; pixels without depth stay black.
Image depth_preview(const Image& depth);

/// Middlebury .flo: "PIEH", width, height, then interleaved u, v as float32.
void write_flo(const fs::path& path, const FlowField& flow);
FlowField read_flo(const fs::path& path);
/// Hue encodes direction, saturation the magnitude relative to max_magnitude (<= 0 picks the
/// field maximum).
Image flow_color_wheel(const FlowField& flow, double max_magnitude = 0.0);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace evgs
