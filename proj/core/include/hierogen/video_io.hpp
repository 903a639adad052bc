#pragma once

#include <filesystem>

#include "hierogen/world.hpp"

namespace hierogen::world {

/// On-disk video layout: zero-padded binary P6 frames `frame_%04d.ppm` plus a
/// `video.json` manifest {fps, T, H, W}.
void save_video(const std::filesystem::path& dir, const Video& video);
Video load_video(const std::filesystem::path& dir);

}  // namespace hierogen::world
