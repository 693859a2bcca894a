#include <algorithm>
#include <cstdio>
#include <sstream>

#include "maris/eval.hpp"

namespace maris::eval {

namespace {

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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::vector<RankedClass>& entries,
                          const std::string& first_label, const std::string& second_label) {
  const bool two = std::any_of(entries.begin(), entries.end(),
                               [](const RankedClass& e) { return e.paired_ap.has_value(); });
  const int label_w = 180, plot_w = 400, bar_h = 12, gap = 8, top = 40;
  const int row_h = two ? 2 * bar_h + gap : bar_h + gap;
  const int height = top + static_cast<int>(entries.size()) * row_h + 40;
  const int width = label_w + plot_w + 60;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(title) << "</text>\n";
  auto x_of = [&](double ap) { return std::clamp(ap, 0.0, 100.0) / 100.0 * plot_w; };
  int y = top;
  for (const auto& e : entries) {
    os << "<text x=\"" << label_w - 6 << "\" y=\"" << y + bar_h - 2
       << "\" text-anchor=\"end\">" << escape(e.name) << "</text>\n";
    os << "<rect x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << x_of(e.ap)
       << "\" height=\"" << bar_h << "\" fill=\"#2b6cb0\"/>\n";
    os << "<text x=\"" << label_w + x_of(e.ap) + 4 << "\" y=\"" << y + bar_h - 2 << "\">"
       << num(e.ap) << "</text>\n";
    if (two) {
      const double v = e.paired_ap.value_or(0.0);
      os << "<rect x=\"" << label_w << "\" y=\"" << y + bar_h << "\" width=\"" << x_of(v)
         << "\" height=\"" << bar_h << "\" fill=\"#dd6b20\"/>\n";
      os << "<text x=\"" << label_w + x_of(v) + 4 << "\" y=\"" << y + 2 * bar_h - 2 << "\">"
         << (e.paired_ap ? num(v) : "n/a") << "</text>\n";
    }
    y += row_h;
  }
  os << "<line x1=\"" << label_w << "\" y1=\"" << top - 4 << "\" x2=\"" << label_w << "\" y2=\""
     << y << "\" stroke=\"black\"/>\n";
  os << "<rect x=\"" << label_w << "\" y=\"" << y + 10 << "\" width=\"10\" height=\"10\" fill=\"#2b6cb0\"/>"
     << "<text x=\"" << label_w + 14 << "\" y=\"" << y + 19 << "\">" << escape(first_label)
     << "</text>\n";
  if (two)
    os << "<rect x=\"" << label_w + 140 << "\" y=\"" << y + 10
       << "\" width=\"10\" height=\"10\" fill=\"#dd6b20\"/>"
       << "<text x=\"" << label_w + 154 << "\" y=\"" << y + 19 << "\">" << escape(second_label)
       << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace maris::eval
