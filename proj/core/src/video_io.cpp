#include "hierogen/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hierogen/fsutil.hpp"

namespace hierogen::world {

namespace {

std::filesystem::path frame_path(const std::filesystem::path& dir, int f) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04d.ppm", f);
  return dir / name;
}

}  // namespace

void save_video(const std::filesystem::path& dir, const Video& video) {
  fs::ensure_dir(dir);
  const int t = video.t(), h = video.h(), w = video.w();
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<unsigned char> buf(static_cast<size_t>(plane) * 3);
  for (int f = 0; f < t; ++f) {
    const float* fr = video.frame(f);
    for (int64_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(fr[c * plane + p], 0.0f, 1.0f);
        buf[static_cast<size_t>(p) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    std::filesystem::path path = frame_path(dir, f);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      require(out.good(), ErrorKind::Io, "cannot open for write: " + tmp.string());
      out << "P6\n" << w << " " << h << "\n255\n";
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      require(out.good(), ErrorKind::Io, "short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }
  fs::write_json_atomic(dir / "video.json",
                        {{"fps", video.fps}, {"T", t}, {"H", h}, {"W", w}});
}

Video load_video(const std::filesystem::path& dir) {
  const fs::json meta = fs::read_json(dir / "video.json");
  int t = 0, h = 0, w = 0;
  float fps = 0.0f;
  try {
    t = meta.at("T").get<int>();
    h = meta.at("H").get<int>();
    w = meta.at("W").get<int>();
    fps = meta.at("fps").get<float>();
  } catch (const fs::json::exception& e) {
    fail(ErrorKind::Parse, dir.string() + "/video.json: " + e.what());
  }
  require(t >= 1 && h >= 1 && w >= 1, ErrorKind::Parse, "bad video.json dimensions");

  Video video;
  video.fps = fps;
  video.frames = Tensor({t, 3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<unsigned char> buf(static_cast<size_t>(plane) * 3);
  for (int f = 0; f < t; ++f) {
    std::ifstream in(frame_path(dir, f), std::ios::binary);
    require(in.good(), ErrorKind::Io, "missing frame: " + frame_path(dir, f).string());
    std::string magic;
    int pw = 0, ph = 0, maxv = 0;
    in >> magic >> pw >> ph >> maxv;
    require(magic == "P6" && pw == w && ph == h && maxv == 255, ErrorKind::Parse,
            "bad PPM header: " + frame_path(dir, f).string());
    in.get();  // single whitespace after header
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(in.good(), ErrorKind::Parse, "truncated PPM: " + frame_path(dir, f).string());
    float* fr = video.frame(f);
    for (int64_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c)
        fr[c * plane + p] = static_cast<float>(buf[static_cast<size_t>(p) * 3 + c]) / 255.0f;
  }
  return video;
}

}  // namespace hierogen::world
