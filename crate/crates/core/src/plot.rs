//! SVG overlay of landmarks, vertebra outlines and corner-offset arrows.

use std::fmt::Write as _;

use crate::io::AnnotationFile;
use crate::types::CORNERS_PER_VERTEBRA;

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Renders `file` over the image at `image_href`. Arrows from each center to
/// its corners are drawn when the file carries decoded centers.
pub fn render_svg(file: &AnnotationFile, image_href: &str) -> String {
    let (w, h) = (file.width, file.height);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="-0.5 -0.5 {w} {h}">"#
    );
    s.push_str(concat!(
        "<defs><marker id=\"head\" viewBox=\"0 0 6 6\" refX=\"6\" refY=\"3\" ",
        "markerWidth=\"4\" markerHeight=\"4\" orient=\"auto\">",
        "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"#ffcc00\"/></marker></defs>\n",
        "<style>.vertebra{fill:none;stroke:#00c8ff;stroke-width:0.4}",
        ".landmark{fill:#ff3030}",
        ".corner-offset{stroke:#ffcc00;stroke-width:0.3;marker-end:url(#head)}</style>\n",
    ));
    let _ = writeln!(
        s,
        r#"<image href="{}" x="-0.5" y="-0.5" width="{w}" height="{h}" preserveAspectRatio="none" style="image-rendering:pixelated"/>"#,
        escape(image_href)
    );

    for quad in file.landmarks.chunks(CORNERS_PER_VERTEBRA) {
        if let [tl, tr, bl, br] = quad {
            let _ = writeln!(
                s,
                r#"<polygon class="vertebra" points="{},{} {},{} {},{} {},{}"/>"#,
                num(tl[0]),
                num(tl[1]),
                num(tr[0]),
                num(tr[1]),
                num(br[0]),
                num(br[1]),
                num(bl[0]),
                num(bl[1])
            );
        }
    }
    if let Some(centers) = &file.centers {
        for (c, quad) in centers.iter().zip(file.landmarks.chunks(CORNERS_PER_VERTEBRA)) {
            for p in quad {
                let _ = writeln!(
                    s,
                    r#"<line class="corner-offset" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                    num(c[0]),
                    num(c[1]),
                    num(p[0]),
                    num(p[1])
                );
            }
        }
    }
    for p in &file.landmarks {
        let _ = writeln!(
            s,
            r#"<circle class="landmark" cx="{}" cy="{}" r="0.8"/>"#,
            num(p[0]),
            num(p[1])
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
