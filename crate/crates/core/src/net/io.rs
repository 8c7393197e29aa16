//! On-disk formats: a network set is a directory with one headerless CSV per
//! day (`<date>.csv`, n rows x n columns); a tessellation is a GeoJSON
//! FeatureCollection of tile polygons and centroid points.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde_json::{json, Value};

use super::{build_grid_tessellation, BBox, MobilityNetwork, Tessellation};
use crate::{Error, Result};

/// Format one weight so the round-trip through text is exact: integer-valued
/// flows print without a decimal point, everything else uses the shortest
/// representation that parses back to the same f64.
fn fmt_weight(w: f64) -> String {
    if w == w.trunc() && w.abs() < 9.007_199_254_740_992e15 {
        format!("{w:.0}")
    } else {
        format!("{w}")
    }
}

/// Write every network in `set` to `dir`, one `<date>.csv` per network.
pub fn save_networks(set: &[MobilityNetwork], dir: &Path) -> Result<()> {
    if let Some(first) = set.first() {
        if let Some(bad) = set.iter().find(|m| m.n() != first.n()) {
            return Err(Error::Shape(format!(
                "network {} has {} nodes, expected {}",
                bad.date,
                bad.n(),
                first.n()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for net in set {
        let path = dir.join(format!("{}.csv", net.date));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for row in net.weights.rows() {
            let line: Vec<String> = row.iter().map(|w| fmt_weight(*w)).collect();
            writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Load every `*.csv` in `dir` as a network, sorted by file stem (dates in
/// ISO form sort chronologically). All files must agree on the node count.
pub fn load_networks(dir: &Path) -> Result<Vec<MobilityNetwork>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    files.sort();
    let mut set = Vec::with_capacity(files.len());
    let mut expected_n: Option<usize> = None;
    for path in files {
        let net = load_one(&path, &mut expected_n)?;
        set.push(net);
    }
    Ok(set)
}

fn load_one(path: &Path, expected_n: &mut Option<usize>) -> Result<MobilityNetwork> {
    let date = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, idx + 1, format!("bad weight {cell:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let n = *expected_n.get_or_insert(row.len());
        if row.len() != n {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("{} columns, expected {n}", row.len()),
            ));
        }
        rows.push(row);
    }
    let n = expected_n.unwrap_or(0);
    if rows.len() != n {
        return Err(Error::parse(
            path,
            rows.len(),
            format!("{} rows, expected {n}", rows.len()),
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let weights = Array2::from_shape_vec((n, n), flat)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    MobilityNetwork::new(date, weights)
}

/// Serialize a tessellation as GeoJSON: one Polygon feature per tile plus one
/// Point feature per centroid, with the grid parameters as foreign members.
pub fn save_tessellation(tess: &Tessellation, path: &Path) -> Result<()> {
    let mut features = Vec::with_capacity(tess.len() * 2);
    for k in 0..tess.len() {
        let ring: Vec<[f64; 2]> = tess.tile_ring(k).iter().map(|&(x, y)| [x, y]).collect();
        features.push(json!({
            "type": "Feature",
            "properties": {"kind": "tile", "index": k},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        }));
    }
    for (k, &(lon, lat)) in tess.centroids.iter().enumerate() {
        features.push(json!({
            "type": "Feature",
            "properties": {"kind": "centroid", "index": k},
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
        }));
    }
    let doc = json!({
        "type": "FeatureCollection",
        "rows": tess.rows,
        "cols": tess.cols,
        "tile_side_m": tess.tile_side_m,
        "bbox": [tess.bbox.min_lon, tess.bbox.min_lat, tess.bbox.max_lon, tess.bbox.max_lat],
        "features": features,
    });
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &doc)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Rebuild a tessellation from a GeoJSON file written by
/// [`save_tessellation`]. The grid is reconstructed from the recorded bbox
/// and shape, so the round-trip is exact.
pub fn load_tessellation(path: &Path) -> Result<Tessellation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let get_usize = |key: &str| -> Result<usize> {
        doc.get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::parse(path, 0, format!("missing field {key:?}")))
    };
    let rows = get_usize("rows")?;
    let cols = get_usize("cols")?;
    let bbox: Vec<f64> = doc
        .get("bbox")
        .and_then(Value::as_array)
        .map(|arr| arr.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| Error::parse(path, 0, "missing field bbox".to_string()))?;
    if bbox.len() != 4 {
        return Err(Error::parse(path, 0, "bbox must have 4 numbers".to_string()));
    }
    let tess = build_grid_tessellation(BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]), rows, cols)?;
    let n_tiles = doc
        .get("features")
        .and_then(Value::as_array)
        .map(|f| {
            f.iter()
                .filter(|feat| feat["properties"]["kind"] == "tile")
                .count()
        })
        .unwrap_or(0);
    if n_tiles != tess.len() {
        return Err(Error::parse(
            path,
            0,
            format!("{} tile features, expected {}", n_tiles, tess.len()),
        ));
    }
    Ok(tess)
}
