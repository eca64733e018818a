#pragma once

// Pascal VOC XML subset: annotation/size/{width,height} and
// annotation/object/{name,bndbox/{xmin,ymin,xmax,ymax}}. VOC corners are
// 1-based and inclusive; only the minimum corner shifts by one on import.

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "pod_sentry/annotation.hpp"

namespace pod_sentry {

namespace detail {

inline double voc_number(const boost::property_tree::ptree& node,
                         const std::string& rel, const std::string& path) {
  auto child = node.get_child_optional(rel);
  if (!child) throw ParseError(path, "missing required element");
  auto v = to_double(child->get_value<std::string>());
  if (!v) {
    throw ParseError(path, "'" + child->get_value<std::string>() +
                               "' is not a number");
  }
  return *v;
}

}  // namespace detail

struct VocDocument {
  ImageRecord image;
  std::vector<GroundTruthItem> annotations;
};

inline VocDocument parse_voc_xml(const std::string& xml_text,
                                 const ClassRegistry& registry) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(xml_text);
  try {
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError("line " + std::to_string(e.line()), e.message());
  }
  auto root = tree.get_child_optional("annotation");
  if (!root) throw ParseError("annotation", "missing required element");

  VocDocument doc;
  const auto filename = root->get_optional<std::string>("filename");
  if (filename) {
    doc.image.path = *filename;
    doc.image.id = std::filesystem::path(*filename).stem().string();
  }
  const double w = detail::voc_number(*root, "size.width",
                                      "annotation/size/width");
  const double h = detail::voc_number(*root, "size.height",
                                      "annotation/size/height");
  if (w <= 0 || h <= 0 || w != std::floor(w) || h != std::floor(h)) {
    throw ParseError("annotation/size", "width and height must be positive "
                                        "integers");
  }
  doc.image.width = static_cast<int>(w);
  doc.image.height = static_cast<int>(h);

  int index = 0;
  for (const auto& [tag, obj] : *root) {
    if (tag != "object") continue;
    ++index;
    const std::string base = "annotation/object[" + std::to_string(index) + "]";
    auto name = obj.get_optional<std::string>("name");
    if (!name) throw ParseError(base + "/name", "missing required element");
    auto cls = registry.find(*name);
    if (!cls) {
      throw ParseError(base + "/name", "unknown class name '" + *name + "'");
    }
    const double xmin = detail::voc_number(obj, "bndbox.xmin", base + "/bndbox/xmin");
    const double ymin = detail::voc_number(obj, "bndbox.ymin", base + "/bndbox/ymin");
    const double xmax = detail::voc_number(obj, "bndbox.xmax", base + "/bndbox/xmax");
    const double ymax = detail::voc_number(obj, "bndbox.ymax", base + "/bndbox/ymax");
    // Checked after the shift: a box narrower than a pixel has xmin > xmax
    // in file coordinates but is still well formed.
    if (xmin - 1.0 > xmax || ymin - 1.0 > ymax) {
      throw ParseError(base + "/bndbox", "malformed box: min corner exceeds "
                                         "max corner");
    }
    doc.annotations.push_back(
        {doc.image.id, *cls, BoundingBox(xmin - 1.0, ymin - 1.0, xmax, ymax)});
  }
  return doc;
}

inline std::string emit_voc_xml(const ImageRecord& image,
                                const std::vector<GroundTruthItem>& items,
                                const ClassRegistry& registry) {
  std::ostringstream out;
  out << "<annotation>\n";
  if (!image.path.empty()) {
    out << "  <filename>" << std::filesystem::path(image.path).filename().string()
        << "</filename>\n";
  }
  out << "  <size>\n    <width>" << image.width << "</width>\n    <height>"
      << image.height << "</height>\n    <depth>3</depth>\n  </size>\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& it : items) {
    const BoundingBox b = it.box.to_pixel(image.width, image.height);
    out << "  <object>\n    <name>" << registry.name(it.class_id)
        << "</name>\n    <bndbox>\n"
        << "      <xmin>" << num(b.x_min() + 1.0) << "</xmin>\n"
        << "      <ymin>" << num(b.y_min() + 1.0) << "</ymin>\n"
        << "      <xmax>" << num(b.x_max()) << "</xmax>\n"
        << "      <ymax>" << num(b.y_max()) << "</ymax>\n"
        << "    </bndbox>\n  </object>\n";
  }
  out << "</annotation>\n";
  return out.str();
}

}  // namespace pod_sentry
