#include "svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace voxsynth::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

std::string num(double v) {
  if (!std::isfinite(v)) v = 0.0;
  if (std::fabs(v) < 0.005) v = 0.0;
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
  return std::string(buf, r.ptr);
}

std::string tick(double v) {
  char buf[64];
  const double a = std::fabs(v);
  const int digits = a == 0.0 || a >= 100.0 ? 0 : a >= 1.0 ? 1 : 3;
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

struct Frame {
  Range x, y;
  double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
  double py(double v) const { return kHeight - kBottom - (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom); }
};

std::string header(const std::string& title) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
         "</text>\n";
}

std::string y_axis(const Frame& f, const std::string& label) {
  std::string s = "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
                  num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(f.py(v) + 4) + "\" text-anchor=\"end\">" + tick(v) +
         "</text>\n";
  }
  s += "<text transform=\"translate(16 " + num((kTop + kHeight - kBottom) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(label) + "</text>\n";
  return s;
}

std::string x_axis(const Frame& f, const std::string& label, bool ticks) {
  std::string s = "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kHeight - kBottom) + "\" x2=\"" + num(kWidth - kRight) +
                  "\" y2=\"" + num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  if (ticks)
    for (int i = 0; i <= 4; ++i) {
      const double v = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
      s += "<text x=\"" + num(f.px(v)) + "\" y=\"" + num(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" +
           tick(v) + "</text>\n";
    }
  s += "<text x=\"" + num((kLeft + kWidth - kRight) / 2) + "\" y=\"" + num(kHeight - 12) +
       "\" text-anchor=\"middle\">" + escape(label) + "</text>\n";
  return s;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1.0 - frac) + v[i + 1] * frac : v[i];
}

}  // namespace

std::string boxplot(const std::string& title, const std::string& y_label, const std::vector<std::string>& groups,
                    const std::vector<BoxSeries>& series) {
  Frame f;
  f.x = {0.0, static_cast<double>(std::max<std::size_t>(groups.size(), 1))};
  for (const auto& s : series)
    for (const auto& g : s.groups)
      for (double v : g) f.y.add(v);
  f.y.pad();
  std::string out = header(title) + y_axis(f, y_label) + x_axis(f, "", false);
  const double slot = (f.px(1.0) - f.px(0.0)) / static_cast<double>(series.size() + 1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out += "<text x=\"" + num(f.px(g + 0.5)) + "\" y=\"" + num(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" +
           escape(groups[g]) + "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].groups.size()) continue;
      std::vector<double> v;
      for (double x : series[s].groups[g])
        if (std::isfinite(x)) v.push_back(x);
      if (v.empty()) continue;
      const double q1 = quantile(v, 0.25), med = quantile(v, 0.5), q3 = quantile(v, 0.75);
      const double iqr = q3 - q1;
      double lo = q1, hi = q3;
      for (double x : v) {
        if (x >= q1 - 1.5 * iqr) lo = std::min(lo, x);
        if (x <= q3 + 1.5 * iqr) hi = std::max(hi, x);
      }
      const double cx = f.px(static_cast<double>(g)) + slot * static_cast<double>(s + 1);
      const double w = slot * 0.7;
      const auto& col = series[s].color;
      out += "<line x1=\"" + num(cx) + "\" y1=\"" + num(f.py(lo)) + "\" x2=\"" + num(cx) + "\" y2=\"" + num(f.py(hi)) +
             "\" stroke=\"" + col + "\"/>\n";
      out += "<rect x=\"" + num(cx - w / 2) + "\" y=\"" + num(f.py(q3)) + "\" width=\"" + num(w) + "\" height=\"" +
             num(f.py(q1) - f.py(q3)) + "\" fill=\"" + col + "\" fill-opacity=\"0.35\" stroke=\"" + col + "\"/>\n";
      out += "<line x1=\"" + num(cx - w / 2) + "\" y1=\"" + num(f.py(med)) + "\" x2=\"" + num(cx + w / 2) + "\" y2=\"" +
             num(f.py(med)) + "\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = kTop + 14.0 * static_cast<double>(s);
    out += "<rect x=\"" + num(kWidth - 130) + "\" y=\"" + num(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           series[s].color + "\"/>\n";
    out += "<text x=\"" + num(kWidth - 115) + "\" y=\"" + num(y + 1) + "\">" + escape(series[s].name) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                    const std::vector<Point>& points, bool diagonal) {
  Frame f;
  for (const auto& p : points) {
    f.x.add(p.x);
    f.y.add(p.y);
  }
  if (diagonal) {
    Range both;
    both.add(f.x.lo), both.add(f.x.hi), both.add(f.y.lo), both.add(f.y.hi);
    f.x = f.y = both;
  }
  f.x.pad();
  f.y.pad();
  std::string out = header(title) + y_axis(f, y_label) + x_axis(f, x_label, true);
  if (diagonal) {
    const double a = std::max(f.x.lo, f.y.lo), b = std::min(f.x.hi, f.y.hi);
    out += "<line x1=\"" + num(f.px(a)) + "\" y1=\"" + num(f.py(a)) + "\" x2=\"" + num(f.px(b)) + "\" y2=\"" +
           num(f.py(b)) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    out += "<circle cx=\"" + num(f.px(p.x)) + "\" cy=\"" + num(f.py(p.y)) + "\" r=\"4\" fill=\"steelblue\"/>\n";
    if (!p.label.empty())
      out += "<text x=\"" + num(f.px(p.x) + 6) + "\" y=\"" + num(f.py(p.y) - 6) + "\">" + escape(p.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string line(const std::string& title, const std::string& x_label, const std::string& y_label,
                 const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& err) {
  Frame f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    f.x.add(x[i]);
    const double e = i < err.size() && std::isfinite(err[i]) ? err[i] : 0.0;
    f.y.add(y[i] - e);
    f.y.add(y[i] + e);
  }
  f.x.pad();
  f.y.pad();
  std::string out = header(title) + y_axis(f, y_label) + x_axis(f, x_label, true);
  std::string pts;
  for (std::size_t i = 0; i < x.size(); ++i) pts += (i ? " " : "") + num(f.px(x[i])) + "," + num(f.py(y[i]));
  if (!pts.empty()) out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i < err.size() && std::isfinite(err[i]) && err[i] > 0.0)
      out += "<line x1=\"" + num(f.px(x[i])) + "\" y1=\"" + num(f.py(y[i] - err[i])) + "\" x2=\"" + num(f.px(x[i])) +
             "\" y2=\"" + num(f.py(y[i] + err[i])) + "\" stroke=\"steelblue\"/>\n";
    out += "<circle cx=\"" + num(f.px(x[i])) + "\" cy=\"" + num(f.py(y[i])) + "\" r=\"4\" fill=\"steelblue\"/>\n";
  }
  return out + "</svg>\n";
}

}  // namespace voxsynth::svg
