#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nodulefuse/types.hpp"

namespace nf {

/// One closed polygon drawn by a radiologist on a single axial slice.
/// Edge points are pixel indices in the source image; by the LIDC drawing
/// convention the outline lies on the first pixel outside the nodule.
struct AnnotationContour {
    double z_position = 0.0; // mm
    std::vector<std::pair<int, int>> edge_points;
    bool inclusion = true;
};

/// One radiologist's reading of one nodule, with the full characteristics
/// block. Each annotation becomes one dataset record.
struct Annotation {
    std::string patient_id;
    BiomarkerVector biomarkers;
    MalignancyScore malignancy;
    std::vector<AnnotationContour> contours;
};

struct ParseResult {
    std::vector<Annotation> annotations;
    int skipped = 0; // nodule reads lacking a complete characteristics block
};

/// Parse a LIDC-style reading-session XML document
/// (readingSession -> unblindedReadNodule -> characteristics + roi/edgeMap).
/// Nodule reads missing any of the 9 characteristics are skipped and
/// counted, matching the dataset's convention that sub-3 mm findings carry
/// no characteristics. Throws DataError on malformed XML (with line
/// context) and UnsupportedSchemaError when the root element is not a
/// LidcReadMessage.
ParseResult parse_annotation_xml(const std::string& document);

} // namespace nf
