#include "omniair/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "csv.hpp"
#include "omniair/checkpoint.hpp"

namespace omniair {

namespace {

std::string line_ref(const std::filesystem::path& path, std::size_t line) {
  return path.filename().string() + " line " + std::to_string(line);
}

std::map<std::string, std::size_t> header_index(std::string_view header) {
  std::map<std::string, std::size_t> idx;
  const auto cols = csv::split(header);
  for (std::size_t i = 0; i < cols.size(); ++i) idx.emplace(std::string(csv::trim(cols[i])), i);
  return idx;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  return in;
}

}  // namespace

// ---------------------------------------------------------------- frame

SeriesFrame SeriesFrame::empty(std::vector<std::int64_t> days, std::size_t stations,
                               std::size_t channels) {
  SeriesFrame f;
  f.days = std::move(days);
  f.stations = stations;
  f.channels = channels;
  f.values.assign(f.days.size() * stations * channels, 0.0);
  f.valid.assign(f.values.size(), 0);
  return f;
}

SeriesFrame SeriesFrame::slice_time(std::size_t begin, std::size_t count) const {
  if (begin + count > steps()) throw std::invalid_argument("slice_time: range exceeds frame");
  SeriesFrame f;
  f.days.assign(days.begin() + static_cast<std::ptrdiff_t>(begin),
                days.begin() + static_cast<std::ptrdiff_t>(begin + count));
  f.stations = stations;
  f.channels = channels;
  const std::size_t row = stations * channels;
  f.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * row),
                  values.begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  f.valid.assign(valid.begin() + static_cast<std::ptrdiff_t>(begin * row),
                 valid.begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
  return f;
}

SeriesFrame SeriesFrame::select_stations(std::span<const std::size_t> keep) const {
  SeriesFrame f = empty(days, keep.size(), channels);
  for (std::size_t t = 0; t < steps(); ++t)
    for (std::size_t k = 0; k < keep.size(); ++k)
      for (std::size_t c = 0; c < channels; ++c) {
        f.values[f.offset(t, k, c)] = value(t, keep[k], c);
        f.valid[f.offset(t, k, c)] = valid[offset(t, keep[k], c)];
      }
  return f;
}

SeriesFrame SeriesFrame::join_stations(const SeriesFrame& a, const SeriesFrame& b) {
  if (a.days != b.days || a.channels != b.channels)
    throw std::invalid_argument("join_stations: frames cover different timestamps or channels");
  SeriesFrame f = empty(a.days, a.stations + b.stations, a.channels);
  for (std::size_t t = 0; t < f.steps(); ++t)
    for (std::size_t c = 0; c < f.channels; ++c) {
      for (std::size_t n = 0; n < a.stations; ++n) {
        f.values[f.offset(t, n, c)] = a.value(t, n, c);
        f.valid[f.offset(t, n, c)] = a.valid[a.offset(t, n, c)];
      }
      for (std::size_t n = 0; n < b.stations; ++n) {
        f.values[f.offset(t, a.stations + n, c)] = b.value(t, n, c);
        f.valid[f.offset(t, a.stations + n, c)] = b.valid[b.offset(t, n, c)];
      }
    }
  return f;
}

// ---------------------------------------------------------------- dates

std::int64_t parse_date(std::string_view iso) {
  iso = csv::trim(iso);
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    if (iso.size() < pos + len) return false;
    const auto [p, ec] = std::from_chars(iso.data() + pos, iso.data() + pos + len, out);
    return ec == std::errc() && p == iso.data() + pos + len;
  };
  if (!num(0, 4, y) || iso.size() < 10 || iso[4] != '-' || !num(5, 2, m) || iso[7] != '-' ||
      !num(8, 2, d) || (iso.size() > 10 && iso[10] != 'T' && iso[10] != ' '))
    throw std::invalid_argument("not an ISO-8601 date: '" + std::string(iso) + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date: '" + std::string(iso) + "'");
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

std::string format_date(std::int64_t days) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

// ---------------------------------------------------------------- stations

std::vector<StationMeta> load_stations(const std::filesystem::path& path, bool allow_unknown_grade) {
  std::ifstream in = open_or_throw(path);
  const auto lines = csv::read_lines(in);
  if (lines.empty()) throw LoadError(path.filename().string() + ": missing header");
  const auto idx = header_index(lines[0]);
  std::vector<std::string> required = {"station_id", "lat", "lon"};
  for (auto name : kGeoFeatureNames) required.emplace_back(name);
  required.emplace_back("grade");
  for (const auto& name : required)
    if (!idx.count(name)) throw LoadError(path.filename().string() + ": missing column '" + name + "'");

  std::vector<StationMeta> out;
  std::set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto cells = csv::split(lines[li]);
    const std::string where = line_ref(path, li + 1);
    auto cell = [&](const std::string& name) -> std::string_view {
      const std::size_t c = idx.at(name);
      if (c >= cells.size()) throw LoadError(where + ": missing value for '" + name + "'");
      return csv::trim(cells[c]);
    };
    auto number = [&](const std::string& name) {
      const auto v = csv::parse_double(cell(name));
      if (!v || !std::isfinite(*v)) throw LoadError(where + ": bad number for '" + name + "'");
      return *v;
    };
    StationMeta s;
    s.id = std::string(cell("station_id"));
    if (s.id.empty()) throw LoadError(where + ": empty station_id");
    if (!seen.insert(s.id).second) throw LoadError(where + ": duplicate station_id '" + s.id + "'");
    try {
      s.point = GeoPoint::make(number("lat"), number("lon"));
    } catch (const LoadError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw LoadError(where + ": " + e.what());
    }
    for (std::size_t f = 0; f < kGeoFeatures; ++f) s.geo_feats[f] = number(std::string(kGeoFeatureNames[f]));
    const auto grade_cell = cell("grade");
    if (grade_cell.empty() && allow_unknown_grade) {
      s.grade = -1;
    } else {
      const auto g = csv::parse_double(grade_cell);
      if (!g || *g != std::floor(*g)) throw LoadError(where + ": grade must be an integer");
      s.grade = static_cast<int>(*g);
      const bool unknown_ok = allow_unknown_grade && s.grade == -1;
      if (!unknown_ok && (s.grade < 0 || s.grade >= static_cast<int>(kGrades)))
        throw LoadError(where + ": grade " + std::to_string(s.grade) + " outside [0, 5]");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_stations(const std::filesystem::path& path, std::span<const StationMeta> stations) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "station_id,lat,lon";
  for (auto name : kGeoFeatureNames) out << ',' << name;
  out << ",grade\n";
  for (const auto& s : stations) {
    out << s.id << ',' << csv::format_double(s.point.lat) << ',' << csv::format_double(s.point.lon);
    for (double f : s.geo_feats) out << ',' << csv::format_double(f);
    out << ',';
    if (s.grade >= 0) out << s.grade;  // blank = unknown
    out << '\n';
  }
}

// ---------------------------------------------------------------- series

SeriesFrame load_series(const std::filesystem::path& path, std::span<const StationMeta> stations) {
  std::ifstream in = open_or_throw(path);
  const auto lines = csv::read_lines(in);
  if (lines.empty()) throw LoadError(path.filename().string() + ": missing header");
  const auto idx = header_index(lines[0]);
  for (const char* name : {"timestamp", "station_id"})
    if (!idx.count(name))
      throw LoadError(path.filename().string() + ": missing column '" + std::string(name) + "'");
  std::array<std::ptrdiff_t, kChannels> channel_col{};
  for (std::size_t c = 0; c < kChannels; ++c) {
    auto it = idx.find(std::string(kChannelNames[c]));
    channel_col[c] = it == idx.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  }
  std::unordered_map<std::string, std::size_t> station_of;
  for (std::size_t i = 0; i < stations.size(); ++i) station_of.emplace(stations[i].id, i);

  struct Row {
    std::int64_t day;
    std::size_t station;
    std::array<double, kChannels> v;
    std::array<std::uint8_t, kChannels> ok;
  };
  std::vector<Row> rows;
  std::int64_t first = 0, last = -1;
  std::set<std::pair<std::int64_t, std::size_t>> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto cells = csv::split(lines[li]);
    const std::string where = line_ref(path, li + 1);
    auto cell = [&](std::size_t c) { return c < cells.size() ? csv::trim(cells[c]) : std::string_view{}; };
    Row r{};
    try {
      r.day = parse_date(cell(idx.at("timestamp")));
    } catch (const std::invalid_argument& e) {
      throw LoadError(where + ": " + e.what());
    }
    const std::string id(cell(idx.at("station_id")));
    auto st = station_of.find(id);
    if (st == station_of.end()) throw LoadError(where + ": unknown station_id '" + id + "'");
    r.station = st->second;
    if (!seen.emplace(r.day, r.station).second)
      throw LoadError(where + ": duplicate (timestamp, station) for '" + id + "'");
    for (std::size_t c = 0; c < kChannels; ++c) {
      if (channel_col[c] < 0) continue;
      const auto text = cell(static_cast<std::size_t>(channel_col[c]));
      if (text.empty()) continue;
      const auto v = csv::parse_double(text);
      if (!v || !std::isfinite(*v))
        throw LoadError(where + ": bad value for '" + std::string(kChannelNames[c]) + "'");
      r.v[c] = *v;
      r.ok[c] = 1;
    }
    if (rows.empty()) first = last = r.day;
    first = std::min(first, r.day);
    last = std::max(last, r.day);
    rows.push_back(r);
  }
  std::vector<std::int64_t> days;
  for (std::int64_t d = first; d <= last; ++d) days.push_back(d);
  SeriesFrame f = SeriesFrame::empty(std::move(days), stations.size());
  for (const Row& r : rows) {
    const auto t = static_cast<std::size_t>(r.day - first);
    for (std::size_t c = 0; c < kChannels; ++c)
      if (r.ok[c]) {
        f.values[f.offset(t, r.station, c)] = r.v[c];
        f.valid[f.offset(t, r.station, c)] = 1;
      }
  }
  return f;
}

void write_series(const std::filesystem::path& path, const SeriesFrame& frame,
                  std::span<const StationMeta> stations) {
  if (stations.size() != frame.stations)
    throw std::invalid_argument("write_series: station list does not match frame");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "timestamp,station_id";
  for (auto name : kChannelNames) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < frame.steps(); ++t) {
    const std::string date = format_date(frame.days[t]);
    for (std::size_t n = 0; n < frame.stations; ++n) {
      bool any = false;
      for (std::size_t c = 0; c < frame.channels; ++c) any = any || frame.is_valid(t, n, c);
      if (!any) continue;
      out << date << ',' << stations[n].id;
      for (std::size_t c = 0; c < kChannels; ++c) {
        out << ',';
        if (c < frame.channels && frame.is_valid(t, n, c)) out << csv::format_double(frame.value(t, n, c));
      }
      out << '\n';
    }
  }
}

void write_series_cache(const std::filesystem::path& dir, const SeriesFrame& frame) {
  ModelParams tensors;
  tensors.add("values", Tensor({frame.steps(), frame.stations, frame.channels}, frame.values));
  std::vector<double> mask(frame.valid.begin(), frame.valid.end());
  tensors.add("valid", Tensor({frame.steps(), frame.stations, frame.channels}, std::move(mask)));
  write_bundle(dir, tensors, {{"kind", "series-cache"}, {"days", frame.days}}, "values.bin");
}

SeriesFrame read_series_cache(const std::filesystem::path& dir) {
  Bundle b = read_bundle(dir);
  if (b.manifest.value("kind", "") != "series-cache")
    throw LoadError(dir.string() + " is not a series cache");
  const Tensor& v = b.tensors.at("values");
  const Tensor& m = b.tensors.at("valid");
  SeriesFrame f;
  f.days = b.manifest.at("days").get<std::vector<std::int64_t>>();
  f.stations = v.dim(1);
  f.channels = v.dim(2);
  f.values = v.data;
  f.valid.assign(m.data.size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) f.valid[i] = m[i] != 0.0 ? 1 : 0;
  return f;
}

// ---------------------------------------------------------------- splits

Splits chrono_split(const SeriesFrame& frame, std::array<double, 3> ratios, std::size_t min_length) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::fabs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw std::invalid_argument("chrono_split: ratios must be non-negative and sum to 1");
  const std::size_t n = frame.steps();
  const auto part = [n](double r) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_train = part(ratios[0]);
  const std::size_t n_val = part(ratios[1]);
  const std::size_t n_test = n - n_train - n_val;
  for (auto [name, len] : {std::pair{"train", n_train}, {"validation", n_val}, {"test", n_test}})
    if (len < min_length)
      throw std::invalid_argument(std::string("chrono_split: ") + name + " split has " +
                                  std::to_string(len) + " steps, needs at least " +
                                  std::to_string(min_length));
  return Splits{frame.slice_time(0, n_train), frame.slice_time(n_train, n_val),
                frame.slice_time(n_train + n_val, n_test)};
}

// ---------------------------------------------------------------- normalization

NormStats NormStats::fit(const SeriesFrame& train, NormScope scope) {
  NormStats s;
  s.scope = scope;
  s.stations = train.stations;
  s.channels = train.channels;
  auto moments = [&](auto&& include) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < train.steps(); ++t)
      for (std::size_t n = 0; n < train.stations; ++n)
        for (std::size_t c = 0; c < train.channels; ++c)
          if (train.is_valid(t, n, c) && include(n, c)) {
            const double v = train.value(t, n, c);
            sum += v;
            sq += v * v;
            ++count;
          }
    if (count == 0) return std::pair{0.0, 1.0};
    const double m = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - m * m);
    return std::pair{m, std::max(std::sqrt(var), kStdFloor)};
  };
  std::vector<double> gm(train.channels), gs(train.channels);
  for (std::size_t c = 0; c < train.channels; ++c)
    std::tie(gm[c], gs[c]) = moments([c](std::size_t, std::size_t cc) { return cc == c; });
  s.global_mean = gm;
  s.global_std = gs;
  if (scope == NormScope::Global) {
    s.mean = gm;
    s.std = gs;
    return s;
  }
  s.mean.resize(train.stations * train.channels);
  s.std.resize(s.mean.size());
  for (std::size_t n = 0; n < train.stations; ++n)
    for (std::size_t c = 0; c < train.channels; ++c) {
      bool any = false;
      for (std::size_t t = 0; t < train.steps() && !any; ++t) any = train.is_valid(t, n, c);
      auto [m, sd] = any ? moments([n, c](std::size_t nn, std::size_t cc) { return nn == n && cc == c; })
                         : std::pair{gm[c], gs[c]};
      s.mean[n * train.channels + c] = m;
      s.std[n * train.channels + c] = sd;
    }
  return s;
}

double NormStats::mean_of(std::size_t n, std::size_t c) const {
  if (scope == NormScope::Global || n >= stations) return global_mean[c];
  return mean[n * channels + c];
}

double NormStats::std_of(std::size_t n, std::size_t c) const {
  if (scope == NormScope::Global || n >= stations) return global_std[c];
  return std[n * channels + c];
}

// ---------------------------------------------------------------- windows

WindowSet::WindowSet(const SeriesFrame& frame, std::size_t input_steps, std::size_t horizon,
                     const NormStats& stats)
    : frame_(&frame), stats_(&stats), input_steps_(input_steps), horizon_(horizon), count_(0) {
  if (input_steps == 0 || horizon == 0)
    throw std::invalid_argument("make_windows: input length and horizon must be positive");
  if (frame.steps() < input_steps + horizon)
    throw std::invalid_argument("make_windows: frame of " + std::to_string(frame.steps()) +
                                " steps is shorter than T + tau = " +
                                std::to_string(input_steps + horizon));
  count_ = frame.steps() - input_steps - horizon + 1;
}

WindowBatch WindowSet::batch(std::span<const std::size_t> windows) const {
  const SeriesFrame& f = *frame_;
  const std::size_t B = windows.size(), T = input_steps_, H = horizon_, N = f.stations,
                    C = f.channels;
  WindowBatch wb;
  wb.batch = B;
  wb.input_steps = T;
  wb.horizon = H;
  wb.stations = N;
  wb.channels = C;
  wb.inputs = Tensor({B, T, N, C});
  wb.input_valid = Tensor({B, T, N, C});
  wb.raw_inputs = Tensor({B, T, N, C});
  wb.targets = Tensor({B, H, N, C});
  wb.target_valid = Tensor({B, H, N, C});
  wb.starts.assign(windows.begin(), windows.end());
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t w = windows[b];
    if (w >= count_) throw std::invalid_argument("window index out of range");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t o = ((b * T + t) * N + n) * C + c;
          if (f.is_valid(w + t, n, c)) {
            const double v = f.value(w + t, n, c);
            wb.inputs[o] = stats_->normalize(v, n, c);
            wb.raw_inputs[o] = v;
            wb.input_valid[o] = 1.0;
          }
        }
    for (std::size_t t = 0; t < H; ++t)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t o = ((b * H + t) * N + n) * C + c;
          if (f.is_valid(w + T + t, n, c)) {
            wb.targets[o] = f.value(w + T + t, n, c);
            wb.target_valid[o] = 1.0;
          }
        }
  }
  return wb;
}

std::vector<WindowBatch> WindowSet::batches(std::size_t batch_size) const {
  std::vector<WindowBatch> out;
  std::vector<std::size_t> ids;
  for (std::size_t w = 0; w < count_; ++w) {
    ids.push_back(w);
    if (ids.size() == batch_size || w + 1 == count_) {
      out.push_back(batch(ids));
      ids.clear();
    }
  }
  return out;
}

WindowSet make_windows(const SeriesFrame& frame, std::size_t input_steps, std::size_t horizon,
                       const NormStats& stats) {
  return WindowSet(frame, input_steps, horizon, stats);
}

WindowBatch input_window(const SeriesFrame& frame, std::size_t end, std::size_t input_steps,
                         std::size_t horizon, const NormStats& stats) {
  if (end < input_steps || end > frame.steps())
    throw std::invalid_argument("input_window: need " + std::to_string(input_steps) +
                                " steps of history before the window end");
  // Pad the frame so the target slots exist; they stay invalid.
  SeriesFrame padded = frame.slice_time(end - input_steps, input_steps);
  for (std::size_t k = 0; k < horizon; ++k) padded.days.push_back(padded.days.back() + 1);
  padded.values.resize(padded.days.size() * padded.stations * padded.channels, 0.0);
  padded.valid.resize(padded.values.size(), 0);
  WindowSet ws(padded, input_steps, horizon, stats);
  const std::size_t first = 0;
  return ws.batch(std::span<const std::size_t>(&first, 1));
}

}  // namespace omniair
