//! User-blocked binary layout.
//!
//! Two files are written side by side: the block file `NAME` and its index
//! `NAME.idx`. All integers and floats are little-endian.
//!
//! Block file:
//!
//! ```text
//! magic    8 bytes  "DPMFBLK\0"
//! version  u32      1
//! reserved u32      0
//! then per block:
//!   user_count   u32
//!   crc32        u32   over the block body
//!   triple_count u64
//!   body: user_count x u32 user ids, then triple_count x (user u32, item u32, rating f32)
//! ```
//!
//! Index file:
//!
//! ```text
//! magic    8 bytes  "DPMFIDX\0"
//! version  u32      1
//! reserved u32      0
//! n_users u32, n_items u32, n_triples u64, rating_min f64, rating_max f64
//! n_tiers u32, tier_end n_tiers x u32
//! user_ids n_users x u64, user_counts n_users x u32
//! item_ids n_items x u64, item_counts n_items x u32     (remapped item order)
//! n_blocks u32, per block: offset u64, byte_len u64, user_count u32, triple_count u64
//! crc32 u32 over every preceding byte of the index
//! ```
//!
//! Item ids inside blocks are already remapped by the tier plan, so item 0 is
//! the most popular item. Within a block, each user's triples are contiguous
//! and sorted by item.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver};
use rand::seq::SliceRandom;

use crate::dataset::tiers::tier_of;
use crate::dataset::{RatingDataset, RatingRange, RatingTriple, TierPlan};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_USERS_PER_BLOCK: usize = 1000;

const BLOCK_MAGIC: &[u8; 8] = b"DPMFBLK\0";
const INDEX_MAGIC: &[u8; 8] = b"DPMFIDX\0";
const FORMAT_VERSION: u32 = 1;
const FILE_HEADER_LEN: u64 = 16;
const BLOCK_HEADER_LEN: u64 = 16;
const TRIPLE_LEN: u64 = 12;

/// Contiguous users' ratings; no user is split across blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBlock {
    pub users: Vec<u32>,
    pub triples: Vec<RatingTriple>,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockOptions {
    pub users_per_block: usize,
    /// Shuffle users before blocking; `None` keeps ascending original-id order.
    pub shuffle_seed: Option<u64>,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            users_per_block: DEFAULT_USERS_PER_BLOCK,
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEntry {
    pub offset: u64,
    pub byte_len: u64,
    pub user_count: u32,
    pub triple_count: u64,
}

/// Everything recorded in the index file.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub n_triples: u64,
    pub range: RatingRange,
    pub tier_ends: Vec<u32>,
    pub user_ids: Vec<u64>,
    pub user_counts: Vec<u32>,
    /// Original item ids in remapped order.
    pub item_ids: Vec<u64>,
    pub item_counts: Vec<u32>,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Clone)]
enum Backing {
    File(PathBuf),
    Memory(Arc<Vec<Arc<UserBlock>>>),
}

/// A blocked dataset, either on disk or held in memory.
#[derive(Debug, Clone)]
pub struct BlockedDataset {
    meta: Arc<BlockMeta>,
    backing: Backing,
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

fn make_blocks(
    ds: &RatingDataset,
    plan: &TierPlan,
    opts: BlockOptions,
) -> Result<(RatingDataset, Vec<UserBlock>)> {
    if opts.users_per_block == 0 {
        return Err(Error::InvalidArgument("users_per_block must be >= 1".into()));
    }
    let remapped = plan.apply(ds)?;
    let mut users: Vec<u32> = (0..ds.n_users() as u32).collect();
    if let Some(s) = opts.shuffle_seed {
        users.shuffle(&mut seed::rng(s, seed::INGEST_SHUFFLE));
    }
    let blocks = users
        .chunks(opts.users_per_block)
        .map(|chunk| UserBlock {
            users: chunk.to_vec(),
            triples: chunk
                .iter()
                .flat_map(|&u| remapped.user_ratings(u as usize).iter().copied())
                .collect(),
        })
        .collect();
    Ok((remapped, blocks))
}

fn meta_for(remapped: &RatingDataset, plan: &TierPlan, entries: Vec<BlockEntry>) -> BlockMeta {
    BlockMeta {
        n_users: remapped.n_users(),
        n_items: remapped.n_items(),
        n_triples: remapped.len() as u64,
        range: remapped.range(),
        tier_ends: plan.tier_ends().to_vec(),
        user_ids: remapped.user_ids().to_vec(),
        user_counts: remapped.user_counts(),
        item_ids: remapped.item_ids().to_vec(),
        item_counts: remapped.item_counts().to_vec(),
        blocks: entries,
    }
}

/// Builds the blocked layout in memory (same content as [`write_blocks`]).
pub fn build_blocks(
    ds: &RatingDataset,
    plan: &TierPlan,
    opts: BlockOptions,
) -> Result<BlockedDataset> {
    let (remapped, blocks) = make_blocks(ds, plan, opts)?;
    let entries = blocks
        .iter()
        .map(|b| BlockEntry {
            offset: 0,
            byte_len: 0,
            user_count: b.users.len() as u32,
            triple_count: b.triples.len() as u64,
        })
        .collect();
    Ok(BlockedDataset {
        meta: Arc::new(meta_for(&remapped, plan, entries)),
        backing: Backing::Memory(Arc::new(blocks.into_iter().map(Arc::new).collect())),
    })
}

/// Remaps items by `plan`, groups users into blocks and writes `path` plus
/// `path.idx`.
pub fn write_blocks(
    ds: &RatingDataset,
    plan: &TierPlan,
    opts: BlockOptions,
    path: impl AsRef<Path>,
) -> Result<BlockedDataset> {
    let path = path.as_ref();
    let (remapped, blocks) = make_blocks(ds, plan, opts)?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Encoder::default();
    header.bytes(BLOCK_MAGIC);
    header.u32(FORMAT_VERSION);
    header.u32(0);
    out.write_all(&header.buf).map_err(|e| Error::io(path, e))?;

    let mut offset = FILE_HEADER_LEN;
    let mut entries = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let mut body = Encoder::default();
        for &u in &block.users {
            body.u32(u);
        }
        for t in &block.triples {
            body.u32(t.user);
            body.u32(t.item);
            body.f32(t.rating);
        }
        let mut head = Encoder::default();
        head.u32(block.users.len() as u32);
        head.u32(crc32fast::hash(&body.buf));
        head.u64(block.triples.len() as u64);
        out.write_all(&head.buf).map_err(|e| Error::io(path, e))?;
        out.write_all(&body.buf).map_err(|e| Error::io(path, e))?;

        let byte_len = BLOCK_HEADER_LEN + body.buf.len() as u64;
        entries.push(BlockEntry {
            offset,
            byte_len,
            user_count: block.users.len() as u32,
            triple_count: block.triples.len() as u64,
        });
        offset += byte_len;
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let meta = meta_for(&remapped, plan, entries);
    let idx = index_path(path);
    std::fs::write(&idx, encode_index(&meta)).map_err(|e| Error::io(&idx, e))?;

    Ok(BlockedDataset {
        meta: Arc::new(meta),
        backing: Backing::File(path.to_path_buf()),
    })
}

/// Opens a block file and iterates its blocks in file order, verifying checksums.
pub fn read_blocks(path: impl AsRef<Path>) -> Result<BlockReader> {
    let path = path.as_ref();
    let meta = Arc::new(read_index(path)?);
    BlockReader::open(path, meta)
}

fn encode_index(meta: &BlockMeta) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(INDEX_MAGIC);
    e.u32(FORMAT_VERSION);
    e.u32(0);
    e.u32(meta.n_users as u32);
    e.u32(meta.n_items as u32);
    e.u64(meta.n_triples);
    e.f64(meta.range.min);
    e.f64(meta.range.max);
    e.u32(meta.tier_ends.len() as u32);
    meta.tier_ends.iter().for_each(|&t| e.u32(t));
    meta.user_ids.iter().for_each(|&v| e.u64(v));
    meta.user_counts.iter().for_each(|&v| e.u32(v));
    meta.item_ids.iter().for_each(|&v| e.u64(v));
    meta.item_counts.iter().for_each(|&v| e.u32(v));
    e.u32(meta.blocks.len() as u32);
    for b in &meta.blocks {
        e.u64(b.offset);
        e.u64(b.byte_len);
        e.u32(b.user_count);
        e.u64(b.triple_count);
    }
    let crc = crc32fast::hash(&e.buf);
    e.u32(crc);
    e.buf
}

fn read_index(path: &Path) -> Result<BlockMeta> {
    let idx = index_path(path);
    let buf = std::fs::read(&idx).map_err(|e| Error::io(&idx, e))?;
    if buf.len() < 4 {
        return Err(Error::corrupt(&idx, "truncated index"));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::corrupt(&idx, "index checksum mismatch"));
    }

    let mut d = Decoder::new(body, &idx);
    if d.take(8)? != INDEX_MAGIC {
        return Err(Error::corrupt(&idx, "not a block index"));
    }
    let version = d.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::corrupt(&idx, format!("unsupported version {version}")));
    }
    d.u32()?;
    let n_users = d.u32()? as usize;
    let n_items = d.u32()? as usize;
    let n_triples = d.u64()?;
    let range = RatingRange::new(d.f64()?, d.f64()?)
        .map_err(|_| Error::corrupt(&idx, "invalid rating range"))?;
    let n_tiers = d.u32()? as usize;
    let tier_ends = (0..n_tiers).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
    let user_ids = (0..n_users).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
    let user_counts = (0..n_users).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
    let item_ids = (0..n_items).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
    let item_counts = (0..n_items).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
    let n_blocks = d.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        blocks.push(BlockEntry {
            offset: d.u64()?,
            byte_len: d.u64()?,
            user_count: d.u32()?,
            triple_count: d.u64()?,
        });
    }
    if !d.is_done() {
        return Err(Error::corrupt(&idx, "trailing bytes in index"));
    }
    Ok(BlockMeta {
        n_users,
        n_items,
        n_triples,
        range,
        tier_ends,
        user_ids,
        user_counts,
        item_ids,
        item_counts,
        blocks,
    })
}

impl BlockedDataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(BlockedDataset {
            meta: Arc::new(read_index(path)?),
            backing: Backing::File(path.to_path_buf()),
        })
    }

    pub fn meta(&self) -> &BlockMeta {
        &self.meta
    }

    pub fn n_blocks(&self) -> usize {
        self.meta.blocks.len()
    }

    /// Sequential iterator over the blocks.
    pub fn blocks(&self) -> Result<Box<dyn Iterator<Item = Result<Arc<UserBlock>>> + Send>> {
        match &self.backing {
            Backing::File(path) => {
                let reader = BlockReader::open(path, self.meta.clone())?;
                Ok(Box::new(reader.map(|b| b.map(Arc::new))))
            }
            Backing::Memory(blocks) => {
                let blocks = blocks.clone();
                Ok(Box::new((0..blocks.len()).map(move |i| Ok(blocks[i].clone()))))
            }
        }
    }

    /// Streams blocks from a background reader with at most `capacity`
    /// blocks buffered ahead of the consumers.
    pub fn stream(&self, capacity: usize) -> Result<BlockStream> {
        let blocks = self.blocks()?;
        let (tx, rx) = bounded(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for block in blocks {
                let failed = block.is_err();
                if tx.send(block).is_err() || failed {
                    break;
                }
            }
        });
        Ok(BlockStream {
            rx: Some(rx),
            handle: Some(handle),
        })
    }

    /// Collects all blocks back into a dataset (items stay in remapped order).
    pub fn to_dataset(&self) -> Result<RatingDataset> {
        let mut triples = Vec::with_capacity(self.meta.n_triples as usize);
        for block in self.blocks()? {
            triples.extend_from_slice(&block?.triples);
        }
        RatingDataset::with_ids(
            triples,
            self.meta.range,
            self.meta.user_ids.clone(),
            self.meta.item_ids.clone(),
        )
    }
}

/// Read-ahead block stream; see [`BlockedDataset::stream`].
pub struct BlockStream {
    rx: Option<Receiver<Result<Arc<UserBlock>>>>,
    handle: Option<JoinHandle<()>>,
}

impl BlockStream {
    pub(crate) fn receiver(&self) -> Receiver<Result<Arc<UserBlock>>> {
        self.rx.clone().expect("stream is live")
    }
}

impl Iterator for BlockStream {
    type Item = Result<Arc<UserBlock>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for BlockStream {
    fn drop(&mut self) {
        // Dropping the receiver unblocks a reader waiting on a full queue.
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Sequential reader over a block file.
pub struct BlockReader {
    path: PathBuf,
    meta: Arc<BlockMeta>,
    file: BufReader<File>,
    next: usize,
    failed: bool,
}

impl BlockReader {
    fn open(path: &Path, meta: Arc<BlockMeta>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut header = [0u8; FILE_HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::corrupt(path, "truncated header"))?;
        if &header[..8] != BLOCK_MAGIC {
            return Err(Error::corrupt(path, "not a block file"));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(path, format!("unsupported version {version}")));
        }
        Ok(BlockReader {
            path: path.to_path_buf(),
            meta,
            file,
            next: 0,
            failed: false,
        })
    }

    pub fn meta(&self) -> &BlockMeta {
        &self.meta
    }

    fn read_block(&mut self, entry: BlockEntry) -> Result<UserBlock> {
        let path = &self.path;
        self.file
            .seek(SeekFrom::Start(entry.offset))
            .map_err(|e| Error::io(path, e))?;
        let mut head = [0u8; BLOCK_HEADER_LEN as usize];
        self.file
            .read_exact(&mut head)
            .map_err(|_| Error::corrupt(path, "truncated block header"))?;
        let user_count = u32::from_le_bytes(head[0..4].try_into().unwrap());
        let crc = u32::from_le_bytes(head[4..8].try_into().unwrap());
        let triple_count = u64::from_le_bytes(head[8..16].try_into().unwrap());
        if user_count != entry.user_count || triple_count != entry.triple_count {
            return Err(Error::corrupt(path, "block header disagrees with index"));
        }
        let body_len = user_count as u64 * 4 + triple_count * TRIPLE_LEN;
        if BLOCK_HEADER_LEN + body_len != entry.byte_len {
            return Err(Error::corrupt(path, "block length disagrees with index"));
        }
        let mut body = vec![0u8; body_len as usize];
        self.file
            .read_exact(&mut body)
            .map_err(|_| Error::corrupt(path, "truncated block"))?;
        if crc32fast::hash(&body) != crc {
            return Err(Error::corrupt(path, "block checksum mismatch"));
        }

        let mut d = Decoder::new(&body, path);
        let users = (0..user_count).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
        let mut triples = Vec::with_capacity(triple_count as usize);
        for _ in 0..triple_count {
            triples.push(RatingTriple::new(d.u32()?, d.u32()?, d.f32()?));
        }
        self.validate(&users, &triples)?;
        Ok(UserBlock { users, triples })
    }

    fn validate(&self, users: &[u32], triples: &[RatingTriple]) -> Result<()> {
        let bad = |reason: &str| Err(Error::corrupt(&self.path, reason));
        if users.iter().any(|&u| u as usize >= self.meta.n_users) {
            return bad("user id out of range");
        }
        // Triples must follow the block's user order, each user contiguous.
        let mut pos = 0usize;
        for t in triples {
            if t.item as usize >= self.meta.n_items {
                return bad("item id out of range");
            }
            while pos < users.len() && users[pos] != t.user {
                pos += 1;
            }
            if pos == users.len() {
                return bad("triples not grouped by the block's users");
            }
        }
        Ok(())
    }
}

impl Iterator for BlockReader {
    type Item = Result<UserBlock>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let entry = *self.meta.blocks.get(self.next)?;
        self.next += 1;
        let block = self.read_block(entry);
        self.failed = block.is_err();
        Some(block)
    }
}

/// Visit order for one block: tier by tier (hottest first), ascending
/// remapped item id within a tier, block order among equal items. Returns
/// indices into `block.triples`; every rating appears exactly once.
pub fn tiered_update_order(block: &UserBlock, tier_ends: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..block.triples.len()).collect();
    order.sort_by_key(|&i| {
        let item = block.triples[i].item;
        (tier_of(tier_ends, item), item)
    });
    order
}

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Decoder<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Decoder { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::corrupt(self.path, "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}
