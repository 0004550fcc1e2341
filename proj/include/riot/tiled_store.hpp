#pragma once

#include <riot/buffer_pool.hpp>
#include <riot/common.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace riot {

enum class LayoutKind : std::uint8_t { RowStrips = 0, ColStrips = 1, Square = 2 };
enum class Linearization : std::uint8_t { TileRowMajor = 0, TileColMajor = 1, ZOrder = 2 };

const char* to_string(LayoutKind k);
const char* to_string(Linearization l);

/// Tile geometry. Always derived from the block size B, so a tile fits one block:
/// strips hold B scalars, squares are floor(sqrt(B)) on a side.
struct TileSpec {
  Index tile_rows = 1;
  Index tile_cols = 1;
  LayoutKind kind = LayoutKind::Square;

  static TileSpec row_strips(Index block_scalars) { return {1, block_scalars, LayoutKind::RowStrips}; }
  static TileSpec col_strips(Index block_scalars) { return {block_scalars, 1, LayoutKind::ColStrips}; }
  static TileSpec square(Index block_scalars);
  static TileSpec of_kind(LayoutKind kind, Index block_scalars);
  /// ColStrips for column vectors, RowStrips for row vectors, Square otherwise.
  static TileSpec default_for(const Shape& shape, Index block_scalars);

  Index area() const { return tile_rows * tile_cols; }
  friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

/// Square tile side for a block of `block_scalars`: floor(sqrt(B)).
Index square_tile_side(Index block_scalars);

/// Interleave tile coordinates: row bit k -> bit 2k, column bit k -> bit 2k+1.
constexpr std::uint64_t morton_encode(std::uint32_t row, std::uint32_t col) {
  auto spread = [](std::uint64_t v) {
    v &= 0xFFFFFFFFull;
    v = (v | (v << 16)) & 0x0000FFFF0000FFFFull;
    v = (v | (v << 8)) & 0x00FF00FF00FF00FFull;
    v = (v | (v << 4)) & 0x0F0F0F0F0F0F0F0Full;
    v = (v | (v << 2)) & 0x3333333333333333ull;
    v = (v | (v << 1)) & 0x5555555555555555ull;
    return v;
  };
  return spread(row) | (spread(col) << 1);
}

/// Maps tile-grid coordinates to a dense rank in [0, rows*cols).
///
/// For ZOrder the grid is padded to powers of two only for computing codes;
/// real tiles are compacted by their rank among the codes of the real grid.
class TileGrid {
 public:
  TileGrid() = default;
  TileGrid(Index rows, Index cols, Linearization lin);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index size() const { return rows_ * cols_; }
  Linearization linearization() const { return lin_; }

  Index linear_index(Index ti, Index tj) const;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Linearization lin_ = Linearization::TileRowMajor;
  std::vector<std::uint32_t> zrank_;  // row-major grid -> rank, ZOrder only
};

/// Handle to an on-disk tiled matrix.
///
/// File layout (all integers little-endian):
///   block 0 (header, B*8 bytes, zero padded):
///     0  "RIOT"          4 bytes
///     4  version = 1     u8, then 3 zero bytes
///     8  rows            u64
///     16 cols            u64
///     24 tile_rows       u64
///     32 tile_cols       u64
///     40 linearization   u8 (0 tile-row-major, 1 tile-col-major, 2 Z-order)
///     41 element type    u8 (1 = IEEE-754 binary64)
///     42 layout kind     u8 (0 row strips, 1 column strips, 2 square)
///     43 zero            5 bytes
///     48 block_scalars   u64
///   blocks 1..: tile data. Tile with rank r starts at data block
///     r * blocks_per_tile; its elements are row-major within the tile,
///     padded with zeros to tile_rows x tile_cols.
class StoredMatrix {
 public:
  static constexpr std::uint8_t kFormatVersion = 1;
  static constexpr std::uint8_t kElementFloat64 = 1;

  static std::shared_ptr<StoredMatrix> create(const std::filesystem::path& path, Shape shape,
                                              TileSpec tiles, Linearization lin,
                                              Index block_scalars);
  static std::shared_ptr<StoredMatrix> open(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return file_->path(); }
  Shape shape() const { return shape_; }
  const TileSpec& tiles() const { return tiles_; }
  Linearization linearization() const { return grid_.linearization(); }
  Index block_scalars() const { return file_->block_scalars(); }
  Index blocks_per_tile() const { return blocks_per_tile_; }
  const TileGrid& grid() const { return grid_; }
  Index num_tiles() const { return grid_.size(); }
  Index num_blocks() const { return grid_.size() * blocks_per_tile_; }

  /// First data block of tile (ti, tj). Throws IndexError outside the grid.
  std::uint64_t tile_address(Index ti, Index tj) const;
  /// In-bounds extent of tile (ti, tj); edge tiles are smaller than the TileSpec.
  Shape tile_extent(Index ti, Index tj) const;

  const std::shared_ptr<BlockFile>& file() const { return file_; }
  void remove_on_close(bool v) { file_->remove_on_close(v); }

 private:
  StoredMatrix(std::shared_ptr<BlockFile> file, Shape shape, TileSpec tiles, Linearization lin);

  std::shared_ptr<BlockFile> file_;
  Shape shape_;
  TileSpec tiles_;
  TileGrid grid_;
  Index blocks_per_tile_ = 1;
};

using MatrixPtr = std::shared_ptr<StoredMatrix>;

/// A tile pinned in the buffer pool. Element (r, c) is relative to the tile.
class PinnedTile {
 public:
  PinnedTile(const StoredMatrix& m, Index ti, Index tj, BufferPool& pool, AccessMode mode);

  Shape extent() const { return extent_; }
  double at(Index r, Index c) const { return *slot(r, c); }
  double& at(Index r, Index c) { return *slot(r, c); }
  /// Contiguous row-major storage when the tile lives in one block.
  double* contiguous() { return blocks_.size() == 1 ? blocks_[0].data().data() : nullptr; }
  Index stride() const { return tile_cols_; }

 private:
  double* slot(Index r, Index c) const;

  std::vector<BlockHandle> blocks_;
  Shape extent_;
  Index tile_cols_;
  Index block_scalars_;
};

/// Copy of the in-bounds part of a tile, row-major.
std::vector<double> read_tile(const StoredMatrix& m, Index ti, Index tj, BufferPool& pool);
/// `data` holds the in-bounds part row-major; padding is written as zeros.
void write_tile(const StoredMatrix& m, Index ti, Index tj, std::span<const double> data,
                BufferPool& pool);

double read_element(const StoredMatrix& m, Index row, Index col, BufferPool& pool);

/// Create and fill a matrix tile by tile from a value function of (row, col).
MatrixPtr generate_matrix(const std::filesystem::path& path, Shape shape, TileSpec tiles,
                          Linearization lin, BufferPool& pool,
                          const std::function<double(Index, Index)>& value);

MatrixPtr import_dense(const std::filesystem::path& path, Shape shape, TileSpec tiles,
                       Linearization lin, std::span<const double> row_major, BufferPool& pool);
std::vector<double> export_dense(const StoredMatrix& m, BufferPool& pool);

MatrixPtr import_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& values,
                        TileSpec tiles, Linearization lin, BufferPool& pool);
Eigen::MatrixXd export_matrix(const StoredMatrix& m, BufferPool& pool);

}  // namespace riot
