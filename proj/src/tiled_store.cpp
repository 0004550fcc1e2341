#include <riot/tiled_store.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fcntl.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little,
              "the on-disk format is little-endian; big-endian hosts are not supported");

namespace riot {

namespace {

constexpr std::array<char, 4> kMagic{'R', 'I', 'O', 'T'};

template <typename T>
void put(std::vector<char>& buf, std::size_t at, T v) {
  std::memcpy(buf.data() + at, &v, sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t at) {
  T v;
  std::memcpy(&v, buf.data() + at, sizeof(T));
  return v;
}

void check_tiles(const TileSpec& t, Index block_scalars) {
  if (block_scalars < 1) throw BudgetError("block size must be positive");
  if (!(t == TileSpec::of_kind(t.kind, block_scalars))) {
    throw FormatError("tile " + std::to_string(t.tile_rows) + "x" + std::to_string(t.tile_cols) +
                      " does not match layout " + to_string(t.kind) + " for B=" +
                      std::to_string(block_scalars));
  }
}

}  // namespace

const char* to_string(LayoutKind k) {
  switch (k) {
    case LayoutKind::RowStrips: return "row-strips";
    case LayoutKind::ColStrips: return "col-strips";
    case LayoutKind::Square: return "square";
  }
  return "?";
}

const char* to_string(Linearization l) {
  switch (l) {
    case Linearization::TileRowMajor: return "tile-row-major";
    case Linearization::TileColMajor: return "tile-col-major";
    case Linearization::ZOrder: return "z-order";
  }
  return "?";
}

Index square_tile_side(Index block_scalars) {
  auto s = static_cast<Index>(std::sqrt(static_cast<double>(block_scalars)));
  while (s * s > block_scalars) --s;
  while ((s + 1) * (s + 1) <= block_scalars) ++s;
  return s;
}

TileSpec TileSpec::square(Index block_scalars) {
  Index s = square_tile_side(block_scalars);
  return {s, s, LayoutKind::Square};
}

TileSpec TileSpec::of_kind(LayoutKind kind, Index block_scalars) {
  switch (kind) {
    case LayoutKind::RowStrips: return row_strips(block_scalars);
    case LayoutKind::ColStrips: return col_strips(block_scalars);
    case LayoutKind::Square: return square(block_scalars);
  }
  throw FormatError("unknown layout kind");
}

TileSpec TileSpec::default_for(const Shape& shape, Index block_scalars) {
  if (shape.cols == 1) return col_strips(block_scalars);
  if (shape.rows == 1) return row_strips(block_scalars);
  return square(block_scalars);
}

TileGrid::TileGrid(Index rows, Index cols, Linearization lin) : rows_(rows), cols_(cols), lin_(lin) {
  if (lin_ != Linearization::ZOrder || size() == 0) return;
  if (rows_ > (Index{1} << 31) || cols_ > (Index{1} << 31)) {
    throw FormatError("tile grid too large for Z-order");
  }
  std::vector<std::uint64_t> code(static_cast<std::size_t>(size()));
  for (Index i = 0; i < rows_; ++i)
    for (Index j = 0; j < cols_; ++j)
      code[static_cast<std::size_t>(i * cols_ + j)] =
          morton_encode(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  std::vector<std::uint32_t> order(code.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return code[a] < code[b]; });
  zrank_.resize(code.size());
  for (std::size_t r = 0; r < order.size(); ++r) zrank_[order[r]] = static_cast<std::uint32_t>(r);
}

Index TileGrid::linear_index(Index ti, Index tj) const {
  if (ti < 0 || tj < 0 || ti >= rows_ || tj >= cols_) {
    throw IndexError("tile (" + std::to_string(ti) + ", " + std::to_string(tj) +
                     ") outside tile grid " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  switch (lin_) {
    case Linearization::TileRowMajor: return ti * cols_ + tj;
    case Linearization::TileColMajor: return tj * rows_ + ti;
    case Linearization::ZOrder: return zrank_[static_cast<std::size_t>(ti * cols_ + tj)];
  }
  return 0;
}

StoredMatrix::StoredMatrix(std::shared_ptr<BlockFile> file, Shape shape, TileSpec tiles,
                           Linearization lin)
    : file_(std::move(file)),
      shape_(shape),
      tiles_(tiles),
      grid_(ceil_div(shape.rows, tiles.tile_rows), ceil_div(shape.cols, tiles.tile_cols), lin),
      blocks_per_tile_(ceil_div(tiles.area(), file_->block_scalars())) {}

std::shared_ptr<StoredMatrix> StoredMatrix::create(const std::filesystem::path& path, Shape shape,
                                                   TileSpec tiles, Linearization lin,
                                                   Index block_scalars) {
  if (shape.rows < 0 || shape.cols < 0) throw ShapeError("negative shape " + to_string(shape));
  check_tiles(tiles, block_scalars);
  if (block_scalars * 8 < 56) throw BudgetError("block too small to hold the header");

  int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot create '" + path.string() + "': " + std::strerror(errno));
  auto file = std::make_shared<BlockFile>(path, fd, block_scalars);
  std::shared_ptr<StoredMatrix> m(new StoredMatrix(file, shape, tiles, lin));

  const auto block_bytes = static_cast<std::size_t>(block_scalars) * sizeof(double);
  std::vector<char> header(block_bytes, 0);
  std::memcpy(header.data(), kMagic.data(), kMagic.size());
  put<std::uint8_t>(header, 4, kFormatVersion);
  put<std::uint64_t>(header, 8, static_cast<std::uint64_t>(shape.rows));
  put<std::uint64_t>(header, 16, static_cast<std::uint64_t>(shape.cols));
  put<std::uint64_t>(header, 24, static_cast<std::uint64_t>(tiles.tile_rows));
  put<std::uint64_t>(header, 32, static_cast<std::uint64_t>(tiles.tile_cols));
  put<std::uint8_t>(header, 40, static_cast<std::uint8_t>(lin));
  put<std::uint8_t>(header, 41, kElementFloat64);
  put<std::uint8_t>(header, 42, static_cast<std::uint8_t>(tiles.kind));
  put<std::uint64_t>(header, 48, static_cast<std::uint64_t>(block_scalars));
  if (::pwrite(fd, header.data(), header.size(), 0) != static_cast<ssize_t>(header.size())) {
    throw IoError("cannot write header of '" + path.string() + "': " + std::strerror(errno));
  }
  const auto total = static_cast<off_t>((1 + m->num_blocks()) * static_cast<Index>(block_bytes));
  if (::ftruncate(fd, total) != 0) {
    throw IoError("cannot size '" + path.string() + "': " + std::strerror(errno));
  }
  return m;
}

std::shared_ptr<StoredMatrix> StoredMatrix::open(const std::filesystem::path& path) {
  int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
  std::vector<char> head(56, 0);
  if (::pread(fd, head.data(), head.size(), 0) != static_cast<ssize_t>(head.size())) {
    ::close(fd);
    throw FormatError("'" + path.string() + "' is too short to hold a header");
  }
  auto fail = [&](const std::string& why) {
    ::close(fd);
    throw FormatError("corrupt header in '" + path.string() + "': " + why);
  };
  if (std::memcmp(head.data(), kMagic.data(), kMagic.size()) != 0) fail("bad magic");
  if (get<std::uint8_t>(head, 4) != kFormatVersion) fail("unsupported version");
  if (get<std::uint8_t>(head, 41) != kElementFloat64) fail("unsupported element type");
  auto lin_code = get<std::uint8_t>(head, 40);
  auto kind_code = get<std::uint8_t>(head, 42);
  if (lin_code > 2) fail("bad linearization code");
  if (kind_code > 2) fail("bad layout code");
  Shape shape{static_cast<Index>(get<std::uint64_t>(head, 8)),
              static_cast<Index>(get<std::uint64_t>(head, 16))};
  TileSpec tiles{static_cast<Index>(get<std::uint64_t>(head, 24)),
                 static_cast<Index>(get<std::uint64_t>(head, 32)),
                 static_cast<LayoutKind>(kind_code)};
  auto block_scalars = static_cast<Index>(get<std::uint64_t>(head, 48));
  if (shape.rows < 0 || shape.cols < 0 || block_scalars < 7) fail("bad dimensions");
  try {
    check_tiles(tiles, block_scalars);
  } catch (const Error& e) {
    fail(e.what());
  }
  auto file = std::make_shared<BlockFile>(path, fd, block_scalars);
  std::shared_ptr<StoredMatrix> m(
      new StoredMatrix(file, shape, tiles, static_cast<Linearization>(lin_code)));
  const auto expected = (1 + m->num_blocks()) * block_scalars * Index{8};
  std::error_code ec;
  auto actual = static_cast<Index>(std::filesystem::file_size(path, ec));
  if (ec || actual < expected) {
    throw FormatError("corrupt header in '" + path.string() + "': file holds " +
                      std::to_string(actual) + " bytes, header implies " + std::to_string(expected));
  }
  return m;
}

std::uint64_t StoredMatrix::tile_address(Index ti, Index tj) const {
  return static_cast<std::uint64_t>(grid_.linear_index(ti, tj) * blocks_per_tile_);
}

Shape StoredMatrix::tile_extent(Index ti, Index tj) const {
  return {std::min(tiles_.tile_rows, shape_.rows - ti * tiles_.tile_rows),
          std::min(tiles_.tile_cols, shape_.cols - tj * tiles_.tile_cols)};
}

PinnedTile::PinnedTile(const StoredMatrix& m, Index ti, Index tj, BufferPool& pool, AccessMode mode)
    : extent_(m.tile_extent(ti, tj)),
      tile_cols_(m.tiles().tile_cols),
      block_scalars_(m.block_scalars()) {
  const auto first = m.tile_address(ti, tj);
  blocks_.reserve(static_cast<std::size_t>(m.blocks_per_tile()));
  for (Index b = 0; b < m.blocks_per_tile(); ++b) {
    blocks_.push_back(pool.get_block(m.file(), first + static_cast<std::uint64_t>(b), mode));
  }
}

double* PinnedTile::slot(Index r, Index c) const {
  const Index flat = r * tile_cols_ + c;
  return blocks_[static_cast<std::size_t>(flat / block_scalars_)].data().data() + flat % block_scalars_;
}

std::vector<double> read_tile(const StoredMatrix& m, Index ti, Index tj, BufferPool& pool) {
  PinnedTile tile(m, ti, tj, pool, AccessMode::Read);
  const Shape e = tile.extent();
  std::vector<double> out(static_cast<std::size_t>(e.size()));
  for (Index r = 0; r < e.rows; ++r)
    for (Index c = 0; c < e.cols; ++c) out[static_cast<std::size_t>(r * e.cols + c)] = tile.at(r, c);
  return out;
}

void write_tile(const StoredMatrix& m, Index ti, Index tj, std::span<const double> data,
                BufferPool& pool) {
  const Shape e = m.tile_extent(ti, tj);
  if (static_cast<Index>(data.size()) != e.size()) {
    throw ShapeError("tile (" + std::to_string(ti) + ", " + std::to_string(tj) + ") holds " +
                     std::to_string(e.size()) + " elements, got " + std::to_string(data.size()));
  }
  // Write mode zero-fills on a miss; on a hit the old padding may be stale.
  PinnedTile tile(m, ti, tj, pool, AccessMode::Write);
  for (Index r = 0; r < m.tiles().tile_rows; ++r)
    for (Index c = 0; c < m.tiles().tile_cols; ++c)
      tile.at(r, c) = (r < e.rows && c < e.cols) ? data[static_cast<std::size_t>(r * e.cols + c)] : 0.0;
}

double read_element(const StoredMatrix& m, Index row, Index col, BufferPool& pool) {
  const Shape s = m.shape();
  if (row < 0 || col < 0 || row >= s.rows || col >= s.cols) {
    throw IndexError("element (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") outside " + to_string(s));
  }
  const Index tr = m.tiles().tile_rows, tc = m.tiles().tile_cols;
  PinnedTile tile(m, row / tr, col / tc, pool, AccessMode::Read);
  return tile.at(row % tr, col % tc);
}

MatrixPtr generate_matrix(const std::filesystem::path& path, Shape shape, TileSpec tiles,
                          Linearization lin, BufferPool& pool,
                          const std::function<double(Index, Index)>& value) {
  auto m = StoredMatrix::create(path, shape, tiles, lin, pool.budget().block_scalars);
  const TileGrid& g = m->grid();
  for (Index ti = 0; ti < g.rows(); ++ti) {
    for (Index tj = 0; tj < g.cols(); ++tj) {
      PinnedTile tile(*m, ti, tj, pool, AccessMode::Write);
      const Shape e = tile.extent();
      for (Index r = 0; r < tiles.tile_rows; ++r)
        for (Index c = 0; c < tiles.tile_cols; ++c)
          tile.at(r, c) = (r < e.rows && c < e.cols)
                              ? value(ti * tiles.tile_rows + r, tj * tiles.tile_cols + c)
                              : 0.0;
    }
  }
  return m;
}

MatrixPtr import_dense(const std::filesystem::path& path, Shape shape, TileSpec tiles,
                       Linearization lin, std::span<const double> row_major, BufferPool& pool) {
  if (static_cast<Index>(row_major.size()) != shape.size()) {
    throw ShapeError("import of " + to_string(shape) + " expects " + std::to_string(shape.size()) +
                     " values, stream holds " + std::to_string(row_major.size()));
  }
  return generate_matrix(path, shape, tiles, lin, pool, [&](Index r, Index c) {
    return row_major[static_cast<std::size_t>(r * shape.cols + c)];
  });
}

std::vector<double> export_dense(const StoredMatrix& m, BufferPool& pool) {
  const Shape s = m.shape();
  std::vector<double> out(static_cast<std::size_t>(s.size()));
  const TileSpec& t = m.tiles();
  for (Index ti = 0; ti < m.grid().rows(); ++ti) {
    for (Index tj = 0; tj < m.grid().cols(); ++tj) {
      PinnedTile tile(m, ti, tj, pool, AccessMode::Read);
      const Shape e = tile.extent();
      for (Index r = 0; r < e.rows; ++r)
        for (Index c = 0; c < e.cols; ++c)
          out[static_cast<std::size_t>((ti * t.tile_rows + r) * s.cols + tj * t.tile_cols + c)] =
              tile.at(r, c);
    }
  }
  return out;
}

MatrixPtr import_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& values,
                        TileSpec tiles, Linearization lin, BufferPool& pool) {
  return generate_matrix(path, Shape{values.rows(), values.cols()}, tiles, lin, pool,
                         [&](Index r, Index c) { return values(r, c); });
}

Eigen::MatrixXd export_matrix(const StoredMatrix& m, BufferPool& pool) {
  auto flat = export_dense(m, pool);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(flat.data(), m.shape().rows, m.shape().cols);
}

}  // namespace riot
