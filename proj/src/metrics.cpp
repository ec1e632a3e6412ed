#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "error.hpp"

namespace despeckler {

void Region::validate(const Image& img) const {
  if (width * height < 4) {
    throw_argument("region '" + label + "' must cover at least 4 pixels");
  }
  if (x0 + width > img.width || y0 + height > img.height) {
    std::ostringstream os;
    os << "region '" << label << "' (" << x0 << ',' << y0 << ' ' << width << 'x' << height
       << ") exceeds the " << img.width << 'x' << img.height << " image";
    throw_argument(os.str());
  }
}

template <typename T>
double psnr(std::span<const T> estimate, std::span<const T> reference, double peak) {
  if (estimate.size() != reference.size() || estimate.empty()) {
    throw_shape("psnr: inputs have different sizes (" + std::to_string(estimate.size()) + " vs " +
                std::to_string(reference.size()) + ")");
  }
  if (!(peak > 0.0)) throw_argument("psnr: peak must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = static_cast<double>(estimate[i]) - static_cast<double>(reference[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(estimate.size());
  if (mse == 0.0) return kInfinity;
  return 10.0 * std::log10(peak * peak / mse);
}

template double psnr<float>(std::span<const float>, std::span<const float>, double);
template double psnr<double>(std::span<const double>, std::span<const double>, double);

double psnr(const Image& estimate, const Image& reference, double peak) {
  if (estimate.height != reference.height || estimate.width != reference.width) {
    throw_shape("psnr: image sizes differ");
  }
  return psnr<float>(estimate.pixels, reference.pixels, peak);
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  const double c = (kWindow - 1) / 2.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += k[t] * src[y * w + x + t];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += k[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments region_moments(const Image& img, const Region& r) {
  r.validate(img);
  double sum = 0.0;
  for (std::size_t y = r.y0; y < r.y0 + r.height; ++y) {
    for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) sum += img.at(y, x);
  }
  const double n = static_cast<double>(r.width * r.height);
  const double mean = sum / n;
  double ss = 0.0;
  for (std::size_t y = r.y0; y < r.y0 + r.height; ++y) {
    for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) {
      const double d = img.at(y, x) - mean;
      ss += d * d;
    }
  }
  return {mean, ss / n};
}

}  // namespace

double ssim(const Image& a, const Image& b, double peak) {
  if (a.height != b.height || a.width != b.width) throw_shape("ssim: image sizes differ");
  if (a.height < kWindow || a.width < kWindow) {
    throw_shape("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                " is smaller than the 11x11 window");
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.pixels[i];
    y[i] = b.pixels[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_window();
  const auto mx = filter_valid(x, a.height, a.width, k);
  const auto my = filter_valid(y, a.height, a.width, k);
  const auto sxx = filter_valid(xx, a.height, a.width, k);
  const auto syy = filter_valid(yy, a.height, a.width, k);
  const auto sxy = filter_valid(xy, a.height, a.width, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double enl(const Image& img, const Region& region) {
  const Moments m = region_moments(img, region);
  if (m.variance == 0.0) {
    warn("ENL of region '" + region.label + "' is unbounded (zero variance)");
    return kInfinity;
  }
  return m.mean * m.mean / m.variance;
}

double cx(const Image& img, const Region& region) {
  const Moments m = region_moments(img, region);
  if (!(m.mean > 0.0)) {
    throw_numeric("Cx of region '" + region.label + "' is undefined (mean is not positive)");
  }
  return std::sqrt(m.variance) / m.mean;
}

std::vector<Region> read_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open region file " + path.string());
  std::vector<Region> regions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    Region r;
    long long x0, y0, w, h;
    if (!(fields >> r.label >> x0 >> y0 >> w >> h) || x0 < 0 || y0 < 0 || w <= 0 || h <= 0) {
      throw_data(path.string() + ":" + std::to_string(lineno) +
                 ": expected 'label, x0, y0, width, height'");
    }
    r.x0 = static_cast<std::size_t>(x0);
    r.y0 = static_cast<std::size_t>(y0);
    r.width = static_cast<std::size_t>(w);
    r.height = static_cast<std::size_t>(h);
    regions.push_back(std::move(r));
  }
  if (regions.empty()) throw_data("region file " + path.string() + " lists no regions");
  return regions;
}

namespace {
template <typename Rows, typename Get>
double mean_of(const Rows& rows, Get get) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& r : rows) s += get(r);
  return s / static_cast<double>(rows.size());
}

std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}
}  // namespace

double EvalReport::mean_psnr() const {
  return mean_of(paired, [](const PairedRow& r) { return r.psnr; });
}
double EvalReport::mean_ssim() const {
  return mean_of(paired, [](const PairedRow& r) { return r.ssim; });
}
std::optional<double> EvalReport::mean_baseline_psnr() const {
  if (paired.empty() || !std::all_of(paired.begin(), paired.end(),
                                     [](const PairedRow& r) { return r.baseline_psnr.has_value(); })) {
    return std::nullopt;
  }
  return mean_of(paired, [](const PairedRow& r) { return *r.baseline_psnr; });
}
std::optional<double> EvalReport::mean_baseline_ssim() const {
  if (paired.empty() || !std::all_of(paired.begin(), paired.end(),
                                     [](const PairedRow& r) { return r.baseline_ssim.has_value(); })) {
    return std::nullopt;
  }
  return mean_of(paired, [](const PairedRow& r) { return *r.baseline_ssim; });
}
double EvalReport::mean_enl() const {
  return mean_of(regions, [](const RegionRow& r) { return r.enl; });
}
double EvalReport::mean_cx() const {
  return mean_of(regions, [](const RegionRow& r) { return r.cx; });
}

std::string EvalReport::table() const {
  std::ostringstream os;
  if (!paired.empty()) {
    std::size_t wname = 5;
    for (const auto& r : paired) wname = std::max(wname, r.name.size());
    const bool baseline = mean_baseline_psnr().has_value();
    os << std::left << std::setw(static_cast<int>(wname)) << "image" << std::right
       << std::setw(10) << "PSNR" << std::setw(9) << "SSIM";
    if (baseline) os << std::setw(14) << "input PSNR" << std::setw(13) << "input SSIM";
    os << '\n';
    auto row = [&](const std::string& name, double p, double s, std::optional<double> bp,
                   std::optional<double> bs) {
      os << std::left << std::setw(static_cast<int>(wname)) << name << std::right << std::setw(10)
         << fmt(p, 2) << std::setw(9) << fmt(s, 4);
      if (baseline) os << std::setw(14) << fmt(*bp, 2) << std::setw(13) << fmt(*bs, 4);
      os << '\n';
    };
    for (const auto& r : paired) row(r.name, r.psnr, r.ssim, r.baseline_psnr, r.baseline_ssim);
    row("mean", mean_psnr(), mean_ssim(), mean_baseline_psnr(), mean_baseline_ssim());
  }
  if (!regions.empty()) {
    if (!paired.empty()) os << '\n';
    std::size_t wname = 5, wreg = 6;
    for (const auto& r : regions) {
      wname = std::max(wname, r.image.size());
      wreg = std::max(wreg, r.region.size());
    }
    os << std::left << std::setw(static_cast<int>(wname)) << "image" << "  "
       << std::setw(static_cast<int>(wreg)) << "region" << std::right << std::setw(12) << "ENL"
       << std::setw(9) << "Cx" << '\n';
    for (const auto& r : regions) {
      os << std::left << std::setw(static_cast<int>(wname)) << r.image << "  "
         << std::setw(static_cast<int>(wreg)) << r.region << std::right << std::setw(12)
         << fmt(r.enl, 2) << std::setw(9) << fmt(r.cx, 4) << '\n';
    }
    os << std::left << std::setw(static_cast<int>(wname)) << "mean" << "  "
       << std::setw(static_cast<int>(wreg)) << "" << std::right << std::setw(12)
       << fmt(mean_enl(), 2) << std::setw(9) << fmt(mean_cx(), 4) << '\n';
  }
  return os.str();
}

std::string EvalReport::key_values() const {
  std::ostringstream os;
  os << std::setprecision(10);
  auto num = [](double v) { return std::isinf(v) ? std::string(v > 0 ? "inf" : "-inf") : fmt(v, 10); };
  for (const auto& r : paired) {
    os << "psnr." << r.name << '=' << num(r.psnr) << '\n';
    os << "ssim." << r.name << '=' << num(r.ssim) << '\n';
    if (r.baseline_psnr) os << "input_psnr." << r.name << '=' << num(*r.baseline_psnr) << '\n';
    if (r.baseline_ssim) os << "input_ssim." << r.name << '=' << num(*r.baseline_ssim) << '\n';
  }
  if (!paired.empty()) {
    os << "count=" << paired.size() << '\n';
    os << "mean_psnr=" << num(mean_psnr()) << '\n';
    os << "mean_ssim=" << num(mean_ssim()) << '\n';
    if (auto b = mean_baseline_psnr()) os << "mean_input_psnr=" << num(*b) << '\n';
    if (auto b = mean_baseline_ssim()) os << "mean_input_ssim=" << num(*b) << '\n';
  }
  for (const auto& r : regions) {
    os << "enl." << r.image << '.' << r.region << '=' << num(r.enl) << '\n';
    os << "cx." << r.image << '.' << r.region << '=' << num(r.cx) << '\n';
  }
  if (!regions.empty()) {
    os << "region_count=" << regions.size() << '\n';
    os << "mean_enl=" << num(mean_enl()) << '\n';
    os << "mean_cx=" << num(mean_cx()) << '\n';
  }
  return os.str();
}

EvalReport evaluate_paired(const std::vector<PairedInput>& inputs, double peak) {
  EvalReport report;
  for (const auto& in : inputs) {
    PairedRow row;
    row.name = in.name;
    row.psnr = psnr(in.estimate, in.reference, peak);
    row.ssim = ssim(in.estimate, in.reference, peak);
    if (in.speckled) {
      row.baseline_psnr = psnr(*in.speckled, in.reference, peak);
      row.baseline_ssim = ssim(*in.speckled, in.reference, peak);
    }
    report.paired.push_back(std::move(row));
  }
  return report;
}

EvalReport evaluate_regions(const std::vector<std::pair<std::string, Image>>& images,
                            const std::vector<Region>& regions) {
  EvalReport report;
  for (const auto& [name, img] : images) {
    for (const auto& r : regions) report.regions.push_back({name, r.label, enl(img, r), cx(img, r)});
  }
  return report;
}

}  // namespace despeckler
