#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/image.hpp"

namespace nvlm {

struct Ratio {
  int cols = 1;
  int rows = 1;
  int tiles() const { return cols * rows; }
  bool operator==(const Ratio&) const = default;
};

// Predefined tiling grids. The default set covers every grid of 1..6 tiles,
// ordered by cols then rows:
//   1:1 1:2 1:3 1:4 1:5 1:6 2:1 2:2 2:3 3:1 3:2 4:1 5:1 6:1
struct RatioSet {
  std::vector<Ratio> ratios;
  int max_tiles = 6;

  static RatioSet with_max_tiles(int max_tiles);
  static RatioSet default_set() { return with_max_tiles(6); }
};

struct PixelBox {
  int left = 0, top = 0, right = 0, bottom = 0;
  bool operator==(const PixelBox&) const = default;
};

enum class ThumbnailPolicy {
  Auto,   // thumbnail appended when the grid has more than one tile
  Never,  // plain grid, no thumbnail
};

struct TileLayout {
  Ratio ratio;
  int tile_size = 448;
  std::vector<PixelBox> tile_boxes;  // row-major over the grid
  bool has_thumbnail = false;
  int canvas_width = 0;
  int canvas_height = 0;

  int tile_count() const { return static_cast<int>(tile_boxes.size()); }
  int block_count() const { return tile_count() + (has_thumbnail ? 1 : 0); }
};

struct CutTiles {
  std::vector<Image> tiles;       // row-major
  std::optional<Image> thumbnail;
};

// Ratio whose log-aspect is closest to the image's. Ties prefer fewer tiles,
// then earlier position in the canonical list.
Ratio match_ratio(int width, int height, const RatioSet& rs);

TileLayout layout(int width, int height, const RatioSet& rs, int tile_size = 448,
                  ThumbnailPolicy policy = ThumbnailPolicy::Auto);

// Resize (anisotropic stretch) to the layout canvas, slice the grid, and
// scale the whole image down to one tile for the thumbnail.
CutTiles cut(const Image& image, const TileLayout& lo);

// Image tokens this layout feeds the LLM: (tiles + thumbnail) * per-tile.
int token_budget(const TileLayout& lo, int tokens_per_tile);

// JSON manifest describing a layout (tile boxes, thumbnail flag, budget).
std::string layout_manifest_json(const TileLayout& lo, int tokens_per_tile,
                                 const std::vector<std::string>& tile_files,
                                 const std::string& thumbnail_file);

}  // namespace nvlm
