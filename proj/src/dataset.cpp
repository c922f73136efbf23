#include "gridcast/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "gridcast/tensor_io.hpp"

namespace gridcast {

WindowIndex build_window_index(Index bins, Index latest_start_cap) {
  if (bins < 36) {
    throw std::invalid_argument("window index: a day needs at least 36 bins, got " + std::to_string(bins));
  }
  if (latest_start_cap < 0) throw std::invalid_argument("window index: negative start cap");
  WindowIndex idx;
  const Index last = std::min(latest_start_cap, bins - kWindowBins);
  for (Index t = 0; t <= last; ++t) idx.valid_starts.push_back(t);
  return idx;
}

Tensor<std::uint8_t> slice_rows(const Tensor<std::uint8_t>& t, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > t.dim(0)) {
    throw std::out_of_range("slice_rows: [" + std::to_string(first) + "," + std::to_string(first + count) +
                            ") outside " + to_string(t.shape()));
  }
  Shape shape = t.shape();
  shape[0] = count;
  const Index row = t.size() / t.dim(0);
  return Tensor<std::uint8_t>(shape, t.array().segment(first * row, count * row));
}

namespace {

Tensor<double> frames_at(const Tensor<std::uint8_t>& window, const Index* offsets, std::size_t n) {
  const Index frame = window.size() / window.dim(0);
  Shape shape = window.shape();
  shape[0] = static_cast<Index>(n);
  auto out = Tensor<double>::uninitialized(shape);
  for (std::size_t i = 0; i < n; ++i) {
    out.array().segment(static_cast<Index>(i) * frame, frame) =
        window.array().segment(offsets[i] * frame, frame).cast<double>();
  }
  return out;
}

}  // namespace

Tensor<double> input_frames(const Tensor<std::uint8_t>& window) {
  Index offsets[kInputFrames];
  for (Index i = 0; i < kInputFrames; ++i) offsets[i] = i;
  return frames_at(window, offsets, kInputFrames);
}

Tensor<double> target_frames(const Tensor<std::uint8_t>& window) {
  return frames_at(window, kLeadOffsets.data(), kLeadOffsets.size());
}

std::filesystem::path movie_path(const std::filesystem::path& root, const std::string& city, int year, int day) {
  char name[32];
  std::snprintf(name, sizeof(name), "%d-%03d.gct", year, day);
  return root / city / "movies" / name;
}

std::filesystem::path static_path(const std::filesystem::path& root, const std::string& city) {
  return root / city / "static.gct";
}

void write_movie(const std::filesystem::path& path, const TrafficMovie& movie) {
  write_tensor_file(path, {{"frames", movie.frames}});
}

TrafficMovie read_movie(const std::filesystem::path& path) {
  TrafficMovie m;
  m.frames = get<std::uint8_t>(read_tensor_file(path), "frames");
  if (m.frames.rank() != 4 || m.frames.dim(3) != kChannelsPerFrame) {
    throw TensorFileError(path.string() + ": movie frames must be (T,H,W,8)");
  }
  return m;
}

void write_static(const std::filesystem::path& path, const StaticMap& map) {
  write_tensor_file(path, {{"static", map.channels}});
}

StaticMap read_static(const std::filesystem::path& path) {
  StaticMap s;
  s.channels = get<std::uint8_t>(read_tensor_file(path), "static");
  if (s.channels.rank() != 3 || s.channels.dim(0) != kStaticChannels) {
    throw TensorFileError(path.string() + ": static map must be (9,H,W)");
  }
  return s;
}

Tensor<std::uint8_t> read_window(const std::filesystem::path& movie_file, Index t) {
  return read_u8_rows(movie_file, "frames", t, kWindowBins);
}

}  // namespace gridcast
