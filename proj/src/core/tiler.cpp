#include "core/tiler.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace nvlm {

RatioSet RatioSet::with_max_tiles(int max_tiles) {
  if (max_tiles < 1) fail(ErrorCode::InvalidArgument, "max_tiles must be >= 1, got ", max_tiles);
  RatioSet rs;
  rs.max_tiles = max_tiles;
  for (int c = 1; c <= max_tiles; ++c)
    for (int r = 1; r <= max_tiles; ++r)
      if (c * r <= max_tiles) rs.ratios.push_back({c, r});
  return rs;
}

Ratio match_ratio(int width, int height, const RatioSet& rs) {
  if (width < 1 || height < 1)
    fail(ErrorCode::InvalidArgument, "image dimensions must be positive, got ", width, "x", height);
  if (rs.ratios.empty()) fail(ErrorCode::InvalidArgument, "empty ratio set");
  double target = std::log(static_cast<double>(width) / static_cast<double>(height));
  const Ratio* best = nullptr;
  double best_dist = 0.0;
  for (const Ratio& r : rs.ratios) {
    double dist = std::fabs(target - std::log(static_cast<double>(r.cols) / r.rows));
    if (!best || dist < best_dist ||
        (dist == best_dist && r.tiles() < best->tiles())) {
      best = &r;
      best_dist = dist;
    }
  }
  return *best;
}

TileLayout layout(int width, int height, const RatioSet& rs, int tile_size,
                  ThumbnailPolicy policy) {
  if (tile_size < 1) fail(ErrorCode::InvalidArgument, "tile_size must be >= 1, got ", tile_size);
  TileLayout lo;
  lo.ratio = match_ratio(width, height, rs);
  lo.tile_size = tile_size;
  lo.canvas_width = lo.ratio.cols * tile_size;
  lo.canvas_height = lo.ratio.rows * tile_size;
  for (int r = 0; r < lo.ratio.rows; ++r)
    for (int c = 0; c < lo.ratio.cols; ++c)
      lo.tile_boxes.push_back(
          {c * tile_size, r * tile_size, (c + 1) * tile_size, (r + 1) * tile_size});
  lo.has_thumbnail = policy == ThumbnailPolicy::Auto && lo.ratio.tiles() > 1;
  return lo;
}

CutTiles cut(const Image& image, const TileLayout& lo) {
  CutTiles out;
  Image canvas = resize_bilinear(image, lo.canvas_width, lo.canvas_height);
  out.tiles.reserve(lo.tile_boxes.size());
  for (const PixelBox& b : lo.tile_boxes)
    out.tiles.push_back(crop(canvas, b.left, b.top, b.right, b.bottom));
  if (lo.has_thumbnail) out.thumbnail = resize_bilinear(image, lo.tile_size, lo.tile_size);
  return out;
}

int token_budget(const TileLayout& lo, int tokens_per_tile) {
  if (tokens_per_tile < 1)
    fail(ErrorCode::InvalidArgument, "tokens_per_tile must be >= 1, got ", tokens_per_tile);
  return lo.block_count() * tokens_per_tile;
}

std::string layout_manifest_json(const TileLayout& lo, int tokens_per_tile,
                                 const std::vector<std::string>& tile_files,
                                 const std::string& thumbnail_file) {
  nlohmann::json j;
  j["ratio"] = {{"cols", lo.ratio.cols}, {"rows", lo.ratio.rows}};
  j["tile_size"] = lo.tile_size;
  j["canvas"] = {{"width", lo.canvas_width}, {"height", lo.canvas_height}};
  j["has_thumbnail"] = lo.has_thumbnail;
  j["tokens_per_tile"] = tokens_per_tile;
  j["token_budget"] = token_budget(lo, tokens_per_tile);
  nlohmann::json tiles = nlohmann::json::array();
  for (std::size_t i = 0; i < lo.tile_boxes.size(); ++i) {
    const PixelBox& b = lo.tile_boxes[i];
    nlohmann::json t;
    t["index"] = i + 1;
    t["box"] = {{"left", b.left}, {"top", b.top}, {"right", b.right}, {"bottom", b.bottom}};
    if (i < tile_files.size()) t["file"] = tile_files[i];
    tiles.push_back(t);
  }
  j["tiles"] = tiles;
  if (lo.has_thumbnail && !thumbnail_file.empty()) j["thumbnail_file"] = thumbnail_file;
  return j.dump(2) + "\n";
}

}  // namespace nvlm
