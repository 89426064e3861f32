//! File formats.
//!
//! Binary containers share one layout: an 8-byte magic, a little-endian
//! `u32` version, then records, each a `u32` byte length followed by the
//! record body. All integers and floats are little-endian.
//!
//! | Container      | Magic      | Record body                                 |
//! |----------------|------------|---------------------------------------------|
//! | frames         | `GSLAMFRM` | one [`SensorFrame`]                         |
//! | LTM journal    | `GSLAMLTM` | one node payload (id, scan, features, grid) |
//! | graph snapshot | `GSLAMGRF` | a single record with the whole graph        |
//!
//! Text formats: trajectories are `stamp x y theta` lines; the frames text
//! dump is described on [`frames_to_text`].

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{Covariance3, Point2, Transform2};
use crate::graph::{Link, LinkKind, MapGraph, MapNode, MemoryLocation, NodeId};
use crate::grid::LocalGrid;
use crate::recognition::{Descriptor, WordId};
use crate::registration::{Scan, ScanFrame};
use crate::sim::{Observation, SensorFrame};

pub const VERSION: u32 = 1;
pub const FRAMES_MAGIC: &[u8; 8] = b"GSLAMFRM";
pub const LTM_MAGIC: &[u8; 8] = b"GSLAMLTM";
pub const GRAPH_MAGIC: &[u8; 8] = b"GSLAMGRF";

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn pose(&mut self, t: &Transform2) {
        self.f64(t.x);
        self.f64(t.y);
        self.f64(t.theta);
    }
    fn point(&mut self, p: &Point2) {
        self.f64(p.x);
        self.f64(p.y);
    }
    fn covariance(&mut self, c: &Covariance3) {
        for v in c.matrix().iter() {
            self.f64(*v);
        }
    }
    fn scan(&mut self, s: &Scan) {
        self.f64(s.stamp);
        self.u8(match s.frame {
            ScanFrame::Base => 0,
            ScanFrame::Odometry => 1,
            ScanFrame::Map => 2,
        });
        self.f64(s.max_range);
        self.len(s.points.len());
        s.points.iter().for_each(|p| self.point(p));
        match &s.normals {
            Some(ns) => {
                self.u8(1);
                ns.iter().for_each(|n| {
                    self.f64(n.x);
                    self.f64(n.y)
                });
            }
            None => self.u8(0),
        }
        self.len(s.misses.len());
        s.misses.iter().for_each(|a| self.f64(*a));
    }
    fn descriptors(&mut self, ds: &[Descriptor]) {
        self.len(ds.len());
        for d in ds {
            self.point(&d.position);
            self.f64(d.response);
            self.len(d.vector.len());
            d.vector.iter().for_each(|v| self.f64(*v));
        }
    }
    fn words(&mut self, ws: &[WordId]) {
        self.len(ws.len());
        ws.iter().for_each(|w| self.u32(*w));
    }
    fn grid(&mut self, g: &LocalGrid) {
        self.f64(g.cell_size);
        for cells in [&g.free, &g.occupied] {
            self.len(cells.len());
            for &(i, j) in cells.iter() {
                self.u32(i as u32);
                self.u32(j as u32);
            }
        }
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!("truncated record at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // Every element takes at least one byte.
        if n > self.data.len() - self.pos {
            return Err(Error::Format(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn pose(&mut self) -> Result<Transform2> {
        Ok(Transform2 {
            x: self.f64()?,
            y: self.f64()?,
            theta: self.f64()?,
        })
    }
    fn point(&mut self) -> Result<Point2> {
        Ok(Point2::new(self.f64()?, self.f64()?))
    }
    fn covariance(&mut self) -> Result<Covariance3> {
        let mut m = nalgebra::Matrix3::zeros();
        for v in m.iter_mut() {
            *v = self.f64()?;
        }
        Covariance3::new(m)
    }
    fn scan(&mut self) -> Result<Scan> {
        let stamp = self.f64()?;
        let frame = match self.u8()? {
            0 => ScanFrame::Base,
            1 => ScanFrame::Odometry,
            2 => ScanFrame::Map,
            v => return Err(Error::Format(format!("bad scan frame tag {v}"))),
        };
        let max_range = self.f64()?;
        let n = self.len()?;
        let points = (0..n).map(|_| self.point()).collect::<Result<Vec<_>>>()?;
        let normals = match self.u8()? {
            0 => None,
            1 => Some(
                (0..n)
                    .map(|_| Ok(Vector2::new(self.f64()?, self.f64()?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            v => return Err(Error::Format(format!("bad normals tag {v}"))),
        };
        let m = self.len()?;
        let misses = (0..m).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Scan {
            stamp,
            frame,
            points,
            normals,
            misses,
            max_range,
        })
    }
    fn descriptors(&mut self) -> Result<Vec<Descriptor>> {
        let n = self.len()?;
        (0..n)
            .map(|_| {
                let position = self.point()?;
                let response = self.f64()?;
                let d = self.len()?;
                let vector = (0..d).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
                Ok(Descriptor {
                    vector,
                    position,
                    response,
                })
            })
            .collect()
    }
    fn words(&mut self) -> Result<Vec<WordId>> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn grid(&mut self) -> Result<LocalGrid> {
        let cell_size = self.f64()?;
        let mut lists = [Vec::new(), Vec::new()];
        for list in lists.iter_mut() {
            let n = self.len()?;
            for _ in 0..n {
                list.push((self.u32()? as i32, self.u32()? as i32));
            }
        }
        let [free, occupied] = lists;
        Ok(LocalGrid {
            cell_size,
            free,
            occupied,
        })
    }
}

/// Writes the container header.
pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&VERSION.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_record<W: Write>(w: &mut W, body: &[u8]) -> Result<()> {
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(body)?;
    Ok(())
}

/// Splits a container into record bodies after checking magic and version.
pub(crate) fn read_records<'a>(data: &'a [u8], magic: &[u8; 8]) -> Result<Vec<&'a [u8]>> {
    if data.len() < 12 || &data[..8] != magic {
        return Err(Error::Format(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(data[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    let mut pos = 12;
    while pos < data.len() {
        if pos + 4 > data.len() {
            return Err(Error::Format("truncated record length".into()));
        }
        let n = u32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + n > data.len() {
            return Err(Error::Format("truncated record".into()));
        }
        out.push(&data[pos..pos + n]);
        pos += n;
    }
    Ok(out)
}

fn encode_frame(f: &SensorFrame) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(f.session);
    w.f64(f.stamp);
    w.pose(&f.gt_pose);
    w.pose(&f.wheel_odom_pose);
    w.scan(&f.scan);
    w.len(f.observations.len());
    for o in &f.observations {
        w.f64(o.bearing);
        w.f64(o.range);
        w.f64(o.response);
        w.len(o.descriptor.len());
        o.descriptor.iter().for_each(|v| w.f64(*v));
    }
    w.buf
}

fn decode_frame(body: &[u8]) -> Result<SensorFrame> {
    let mut r = Reader::new(body);
    let session = r.u32()?;
    let stamp = r.f64()?;
    let gt_pose = r.pose()?;
    let wheel_odom_pose = r.pose()?;
    let scan = r.scan()?;
    let n = r.len()?;
    let observations = (0..n)
        .map(|_| {
            let bearing = r.f64()?;
            let range = r.f64()?;
            let response = r.f64()?;
            let d = r.len()?;
            let descriptor = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Ok(Observation {
                descriptor,
                bearing,
                range,
                response,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !r.done() {
        return Err(Error::Format("trailing bytes in frame record".into()));
    }
    Ok(SensorFrame {
        session,
        stamp,
        gt_pose,
        wheel_odom_pose,
        scan,
        observations,
    })
}

pub fn encode_frames(frames: &[SensorFrame]) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, FRAMES_MAGIC).unwrap();
    for f in frames {
        write_record(&mut out, &encode_frame(f)).unwrap();
    }
    out
}

pub fn decode_frames(data: &[u8]) -> Result<Vec<SensorFrame>> {
    read_records(data, FRAMES_MAGIC)?.into_iter().map(decode_frame).collect()
}

pub fn write_frames(path: &Path, frames: &[SensorFrame]) -> Result<()> {
    std::fs::write(path, encode_frames(frames))?;
    Ok(())
}

/// Reads a frames file, binary or text dump.
pub fn read_frames(path: &Path) -> Result<Vec<SensorFrame>> {
    let data = std::fs::read(path)?;
    if data.starts_with(FRAMES_MAGIC) {
        decode_frames(&data)
    } else {
        let text = String::from_utf8(data).map_err(|_| Error::Format("frames file is neither binary nor text".into()))?;
        frames_from_text(&text)
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for v in values {
        let _ = write!(s, " {v:?}");
    }
    s
}

/// Lossless text dump of frames, one block per frame:
///
/// ```text
/// frame <session> <stamp> <gt x y θ> <odom x y θ> <max_range> <frame tag>
/// points <n> <x y>...
/// normals <n> <x y>...        (only when present)
/// misses <n> <angle>...
/// obs <bearing> <range> <response> <dim> <v>...   (zero or more)
/// end
/// ```
pub fn frames_to_text(frames: &[SensorFrame]) -> String {
    let mut s = String::from("# gslam frames v1\n");
    for f in frames {
        let g = &f.gt_pose;
        let o = &f.wheel_odom_pose;
        let tag = match f.scan.frame {
            ScanFrame::Base => "base",
            ScanFrame::Odometry => "odom",
            ScanFrame::Map => "map",
        };
        let _ = writeln!(
            s,
            "frame {} {:?}{}{}{} {}",
            f.session,
            f.stamp,
            join([g.x, g.y, g.theta]),
            join([o.x, o.y, o.theta]),
            join([f.scan.max_range]),
            tag
        );
        let _ = writeln!(s, "points {}{}", f.scan.points.len(), join(f.scan.points.iter().flat_map(|p| [p.x, p.y])));
        if let Some(ns) = &f.scan.normals {
            let _ = writeln!(s, "normals {}{}", ns.len(), join(ns.iter().flat_map(|n| [n.x, n.y])));
        }
        let _ = writeln!(s, "misses {}{}", f.scan.misses.len(), join(f.scan.misses.iter().copied()));
        for ob in &f.observations {
            let _ = writeln!(
                s,
                "obs{} {}{}",
                join([ob.bearing, ob.range, ob.response]),
                ob.descriptor.len(),
                join(ob.descriptor.iter().copied())
            );
        }
        s.push_str("end\n");
    }
    s
}

pub fn frames_from_text(text: &str) -> Result<Vec<SensorFrame>> {
    let mut frames = Vec::new();
    let mut current: Option<SensorFrame> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut it = line.split_whitespace();
        let head = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        let nums = |xs: &[&str]| -> Result<Vec<f64>> {
            xs.iter()
                .map(|x| x.parse::<f64>().map_err(|_| err(&format!("bad number '{x}'"))))
                .collect()
        };
        let counted = |xs: &[&str], per: usize| -> Result<Vec<f64>> {
            let n: usize = xs.first().ok_or_else(|| err("missing count"))?.parse().map_err(|_| err("bad count"))?;
            let v = nums(&xs[1..])?;
            if v.len() != n * per {
                return Err(err("count does not match values"));
            }
            Ok(v)
        };
        match head {
            "frame" => {
                if current.is_some() {
                    return Err(err("frame without end"));
                }
                if rest.len() != 10 {
                    return Err(err("frame expects 10 fields"));
                }
                let session = rest[0].parse().map_err(|_| err("bad session"))?;
                let v = nums(&rest[1..9])?;
                let frame = match rest[9] {
                    "base" => ScanFrame::Base,
                    "odom" => ScanFrame::Odometry,
                    "map" => ScanFrame::Map,
                    _ => return Err(err("bad frame tag")),
                };
                current = Some(SensorFrame {
                    session,
                    stamp: v[0],
                    gt_pose: Transform2 { x: v[1], y: v[2], theta: v[3] },
                    wheel_odom_pose: Transform2 { x: v[4], y: v[5], theta: v[6] },
                    scan: Scan {
                        stamp: v[0],
                        frame,
                        max_range: v[7],
                        ..Scan::default()
                    },
                    observations: Vec::new(),
                });
            }
            "points" | "normals" | "misses" | "obs" | "end" => {
                let f = current.as_mut().ok_or_else(|| err("record outside a frame"))?;
                match head {
                    "points" => f.scan.points = counted(&rest, 2)?.chunks(2).map(|c| Point2::new(c[0], c[1])).collect(),
                    "normals" => f.scan.normals = Some(counted(&rest, 2)?.chunks(2).map(|c| Vector2::new(c[0], c[1])).collect()),
                    "misses" => f.scan.misses = counted(&rest, 1)?,
                    "obs" => {
                        if rest.len() < 4 {
                            return Err(err("obs expects bearing range response dim values"));
                        }
                        let v = nums(&rest[..3])?;
                        f.observations.push(Observation {
                            bearing: v[0],
                            range: v[1],
                            response: v[2],
                            descriptor: counted(&rest[3..], 1)?,
                        });
                    }
                    _ => frames.push(current.take().unwrap()),
                }
            }
            other => return Err(err(&format!("unknown record '{other}'"))),
        }
    }
    if current.is_some() {
        return Err(Error::Format("last frame has no end".into()));
    }
    Ok(frames)
}

/// Heavy per-node data, moved out of memory while a node sits in LTM.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodePayload {
    pub scan: Scan,
    pub descriptors: Vec<Descriptor>,
    pub words: Vec<WordId>,
    pub local_grid: LocalGrid,
}

impl NodePayload {
    /// Moves scan, descriptors and words out of `node`. The local grid is
    /// copied and stays on the node so the global map can still be rebuilt.
    pub fn take_from(node: &mut MapNode) -> Self {
        Self {
            scan: std::mem::take(&mut node.scan),
            descriptors: std::mem::take(&mut node.descriptors),
            words: std::mem::take(&mut node.words),
            local_grid: node.local_grid.clone(),
        }
    }

    pub fn restore_into(self, node: &mut MapNode) {
        node.scan = self.scan;
        node.descriptors = self.descriptors;
        node.words = self.words;
        node.local_grid = self.local_grid;
    }
}

pub(crate) fn encode_payload(id: NodeId, p: &NodePayload) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(id);
    w.scan(&p.scan);
    w.descriptors(&p.descriptors);
    w.words(&p.words);
    w.grid(&p.local_grid);
    w.buf
}

pub(crate) fn decode_payload(body: &[u8]) -> Result<(NodeId, NodePayload)> {
    let mut r = Reader::new(body);
    let id = r.u64()?;
    let p = NodePayload {
        scan: r.scan()?,
        descriptors: r.descriptors()?,
        words: r.words()?,
        local_grid: r.grid()?,
    };
    if !r.done() {
        return Err(Error::Format("trailing bytes in journal record".into()));
    }
    Ok((id, p))
}

/// Append-only on-disk store of node payloads.
#[derive(Debug)]
pub struct LtmJournal {
    file: std::fs::File,
    /// node → (offset of the record body, length).
    index: std::collections::BTreeMap<NodeId, (u64, u32)>,
    end: u64,
}

impl LtmJournal {
    /// Creates (truncating) a journal at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .truncate(true)
            .read(true)
            .write(true)
            .open(path)?;
        write_header(&mut file, LTM_MAGIC)?;
        Ok(Self {
            file,
            index: Default::default(),
            end: 12,
        })
    }

    pub fn append(&mut self, id: NodeId, payload: &NodePayload) -> Result<()> {
        use std::io::Seek;
        let body = encode_payload(id, payload);
        self.file.seek(std::io::SeekFrom::Start(self.end))?;
        write_record(&mut self.file, &body)?;
        self.index.insert(id, (self.end + 4, body.len() as u32));
        self.end += 4 + body.len() as u64;
        Ok(())
    }

    /// Latest payload written for `id`.
    pub fn load(&mut self, id: NodeId) -> Result<NodePayload> {
        use std::io::Seek;
        let &(offset, len) = self
            .index
            .get(&id)
            .ok_or_else(|| Error::Format(format!("node {id} is not in the journal")))?;
        self.file.seek(std::io::SeekFrom::Start(offset))?;
        let mut body = vec![0; len as usize];
        self.file.read_exact(&mut body)?;
        let (got, p) = decode_payload(&body)?;
        if got != id {
            return Err(Error::Format(format!("journal record for {got}, expected {id}")));
        }
        Ok(p)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Reads every record of a journal file in order.
    pub fn read_all(path: &Path) -> Result<Vec<(NodeId, NodePayload)>> {
        let data = std::fs::read(path)?;
        read_records(&data, LTM_MAGIC)?.into_iter().map(decode_payload).collect()
    }
}

fn location_code(l: MemoryLocation) -> u8 {
    match l {
        MemoryLocation::Stm => 0,
        MemoryLocation::Wm => 1,
        MemoryLocation::Ltm => 2,
    }
}

/// Serializes the whole graph, nodes with their data, links and optimized
/// poses.
pub fn encode_graph(graph: &MapGraph) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(graph.len());
    for n in graph.nodes() {
        w.u64(n.id);
        w.u32(n.session);
        w.f64(n.stamp);
        w.pose(&n.odom_pose);
        w.u32(n.weight);
        w.u8(location_code(n.location));
        w.scan(&n.scan);
        w.descriptors(&n.descriptors);
        w.words(&n.words);
        w.grid(&n.local_grid);
    }
    w.len(graph.link_total());
    for l in graph.links() {
        w.u64(l.from);
        w.u64(l.to);
        w.u8(l.kind.code());
        w.pose(&l.transform);
        w.covariance(&l.covariance);
    }
    w.len(graph.optimized_poses.len());
    for (id, p) in &graph.optimized_poses {
        w.u64(*id);
        w.pose(p);
    }
    let mut out = Vec::new();
    write_header(&mut out, GRAPH_MAGIC).unwrap();
    write_record(&mut out, &w.buf).unwrap();
    out
}

pub fn decode_graph(data: &[u8]) -> Result<MapGraph> {
    let records = read_records(data, GRAPH_MAGIC)?;
    let [body] = records.as_slice() else {
        return Err(Error::Format("graph snapshot must hold one record".into()));
    };
    let mut r = Reader::new(body);
    let mut g = MapGraph::new();
    for _ in 0..r.len()? {
        let mut n = MapNode::new(r.u64()?, r.u32()?, r.f64()?, r.pose()?);
        n.weight = r.u32()?;
        n.location = match r.u8()? {
            0 => MemoryLocation::Stm,
            1 => MemoryLocation::Wm,
            2 => MemoryLocation::Ltm,
            v => return Err(Error::Format(format!("bad location {v}"))),
        };
        n.scan = r.scan()?;
        n.descriptors = r.descriptors()?;
        n.words = r.words()?;
        n.local_grid = r.grid()?;
        g.add_node(n)?;
    }
    for _ in 0..r.len()? {
        let from = r.u64()?;
        let to = r.u64()?;
        let kind = LinkKind::from_code(r.u8()?).ok_or_else(|| Error::Format("bad link kind".into()))?;
        let transform = r.pose()?;
        let covariance = r.covariance()?;
        g.add_link(Link::new(from, to, kind, transform, covariance))?;
    }
    for _ in 0..r.len()? {
        let id = r.u64()?;
        let p = r.pose()?;
        g.optimized_poses.insert(id, p);
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes in graph snapshot".into()));
    }
    Ok(g)
}

/// One `stamp x y theta` line per pose.
pub fn trajectory_to_text(poses: &[(f64, Transform2)]) -> String {
    let mut s = String::new();
    for (t, p) in poses {
        let _ = writeln!(s, "{t:?} {:?} {:?} {:?}", p.x, p.y, p.theta);
    }
    s
}

pub fn trajectory_from_text(text: &str) -> Result<Vec<(f64, Transform2)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected 'stamp x y theta'".into(),
            });
        }
        out.push((v[0], Transform2 { x: v[1], y: v[2], theta: v[3] }));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Transform2)>> {
    trajectory_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{presets, simulate, SimParams};

    fn frames() -> Vec<SensorFrame> {
        let mut f = simulate(&presets::ring_world(), &presets::square_loop(1.0, 1.0), &SimParams::default(), 4).unwrap();
        f[1].scan.normals = Some(vec![Vector2::new(0.6, 0.8); f[1].scan.len()]);
        f
    }

    #[test]
    fn frames_binary_roundtrip() {
        let f = frames();
        let bytes = encode_frames(&f);
        assert_eq!(&bytes[..8], FRAMES_MAGIC);
        assert_eq!(decode_frames(&bytes).unwrap(), f);
        assert!(decode_frames(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_frames(&bad).is_err());
    }

    #[test]
    fn frames_text_roundtrip() {
        let f = frames();
        assert_eq!(frames_from_text(&frames_to_text(&f)).unwrap(), f);
        assert!(frames_from_text("frame 0 1").is_err());
        assert!(frames_from_text("points 1 0 0").is_err());
    }

    #[test]
    fn journal_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ltm.bin");
        let mut j = LtmJournal::create(&path).unwrap();
        let p1 = NodePayload {
            scan: Scan::from_points(vec![Point2::new(1.0, 2.0)]),
            descriptors: vec![Descriptor { vector: vec![0.6, 0.8], position: Point2::new(3.0, 4.0), response: 0.5 }],
            words: vec![7, 7, 9],
            local_grid: LocalGrid { cell_size: 0.05, free: vec![(-1, 2)], occupied: vec![(3, -4)] },
        };
        j.append(4, &p1).unwrap();
        j.append(5, &NodePayload::default()).unwrap();
        assert_eq!(j.load(4).unwrap(), p1);
        assert_eq!(j.load(5).unwrap(), NodePayload::default());
        assert!(j.load(6).is_err());
        let all = LtmJournal::read_all(&path).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0], (4, p1));
    }

    #[test]
    fn graph_roundtrip() {
        let mut g = MapGraph::new();
        for i in 1..=3 {
            let mut n = MapNode::new(i, 0, i as f64 * 0.5, Transform2::new(i as f64, 0.5, 0.1));
            n.weight = i as u32;
            n.words = vec![i as u32];
            n.location = if i == 1 { MemoryLocation::Ltm } else { MemoryLocation::Stm };
            g.add_node(n).unwrap();
        }
        g.add_link(Link::new(1, 2, LinkKind::Neighbor, Transform2::new(1.0, 0.0, 0.0), Covariance3::diagonal(0.1, 0.2, 0.3).unwrap())).unwrap();
        g.add_link(Link::new(3, 1, LinkKind::LoopClosure, Transform2::new(-2.0, 0.0, 0.0), Covariance3::isotropic(0.01))).unwrap();
        g.optimized_poses.insert(2, Transform2::new(1.0, 1.0, 1.0));
        assert_eq!(decode_graph(&encode_graph(&g)).unwrap(), g);
    }

    #[test]
    fn trajectory_text() {
        let t = vec![(0.0, Transform2::new(1.0, 2.0, 0.5)), (0.1, Transform2::new(1.1, 2.0, -3.0))];
        assert_eq!(trajectory_from_text(&trajectory_to_text(&t)).unwrap(), t);
        assert!(trajectory_from_text("1 2 3").is_err());
        assert!(trajectory_from_text("1 2 3 x").is_err());
    }
}
