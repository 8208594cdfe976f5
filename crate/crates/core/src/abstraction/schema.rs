//! Element multigraph: primitive and virtual network elements plus their
//! dependency edges.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AbstractionError;

/// Opaque element identifier (the short lowercase names used in programs).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(s: impl Into<String>) -> Self {
        ElementId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for ElementId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        ElementId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Primitive,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Node,
    Link,
    Session,
    Parameter,
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityType::Node => "node",
            EntityType::Link => "link",
            EntityType::Session => "session",
            EntityType::Parameter => "parameter",
        })
    }
}

/// Protocol layer tag. `None` is reserved for topological elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    Application,
    Transport,
    Network,
    Datalink,
    Physical,
    None,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Application => "application",
            Layer::Transport => "transport",
            Layer::Network => "network",
            Layer::Datalink => "datalink",
            Layer::Physical => "physical",
            Layer::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    pub id: ElementId,
    pub kind: ElementKind,
    pub entity_type: EntityType,
    pub layer: Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VirtualElement {
    pub element: ElementRef,
    pub scope: Scope,
    pub member_entity_type: EntityType,
    /// The primitive holder each local instance attaches to (e.g. `lnk` for
    /// Sessions-of-Link). Absent for global elements.
    pub owner: Option<ElementId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Element {
    Primitive(ElementRef),
    Virtual(VirtualElement),
}

impl Element {
    pub fn element_ref(&self) -> &ElementRef {
        match self {
            Element::Primitive(r) => r,
            Element::Virtual(v) => &v.element,
        }
    }

    pub fn id(&self) -> &ElementId {
        &self.element_ref().id
    }

    pub fn as_virtual(&self) -> Option<&VirtualElement> {
        match self {
            Element::Virtual(v) => Some(v),
            Element::Primitive(_) => None,
        }
    }

    pub fn is_parameter(&self) -> bool {
        self.element_ref().entity_type == EntityType::Parameter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    HasAttribute,
    EachMemberIs,
    IsFunctionOf,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::HasAttribute => "has_attribute",
            Relation::EachMemberIs => "each_member_is",
            Relation::IsFunctionOf => "is_function_of",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub src: ElementId,
    pub dst: ElementId,
    pub relation: Relation,
}

/// Closed interval of admissible values for a parameter when it is used as a
/// decision variable. Infinite ends are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bounds { lo, hi }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn intersect(&self, other: &Bounds) -> Bounds {
        Bounds::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// The directed element multigraph.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSchema {
    elements: BTreeMap<ElementId, Element>,
    edges: Vec<DependencyEdge>,
    aliases: BTreeMap<String, ElementId>,
    default_bounds: BTreeMap<ElementId, Bounds>,
}

pub const NODE: &str = "nd";
pub const LINK: &str = "lnk";
pub const SESSION: &str = "ses";

impl NetworkSchema {
    pub fn empty() -> Self {
        NetworkSchema {
            elements: BTreeMap::new(),
            edges: Vec::new(),
            aliases: BTreeMap::new(),
            default_bounds: BTreeMap::new(),
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.values()
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn has_edge(&self, src: &str, relation: Relation, dst: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.src.as_str() == src && e.dst.as_str() == dst && e.relation == relation)
    }

    /// Canonical id for a name, following aliases (`ntses` -> `netses`).
    pub fn canonical(&self, name: &str) -> Option<ElementId> {
        if self.elements.contains_key(name) {
            return Some(ElementId::new(name));
        }
        self.aliases.get(name).cloned()
    }

    pub fn get(&self, name: &str) -> Option<&Element> {
        let id = self.canonical(name)?;
        self.elements.get(&id)
    }

    pub fn element(&self, id: &ElementId) -> Result<&Element, AbstractionError> {
        self.get(id.as_str())
            .ok_or_else(|| AbstractionError::UnknownElement(id.to_string()))
    }

    pub fn virtual_element(&self, id: &ElementId) -> Result<&VirtualElement, AbstractionError> {
        self.element(id)?
            .as_virtual()
            .ok_or_else(|| AbstractionError::UnknownElement(format!("{id} is not a virtual element")))
    }

    pub fn default_bounds(&self, id: &ElementId) -> Bounds {
        self.default_bounds
            .get(id)
            .copied()
            .unwrap_or(Bounds::new(f64::NEG_INFINITY, f64::INFINITY))
    }

    pub fn add_primitive(&mut self, id: &str, entity_type: EntityType, layer: Layer) {
        let r = ElementRef {
            id: ElementId::new(id),
            kind: ElementKind::Primitive,
            entity_type,
            layer,
        };
        self.elements.insert(r.id.clone(), Element::Primitive(r));
    }

    pub fn add_virtual(&mut self, id: &str, member: EntityType, owner: Option<&str>) {
        let v = VirtualElement {
            element: ElementRef {
                id: ElementId::new(id),
                kind: ElementKind::Virtual,
                entity_type: member,
                layer: Layer::None,
            },
            scope: if owner.is_some() { Scope::Local } else { Scope::Global },
            member_entity_type: member,
            owner: owner.map(ElementId::new),
        };
        self.elements.insert(v.element.id.clone(), Element::Virtual(v));
    }

    pub fn add_edge(&mut self, src: &str, relation: Relation, dst: &str) {
        self.edges.push(DependencyEdge {
            src: ElementId::new(src),
            dst: ElementId::new(dst),
            relation,
        });
    }

    pub fn add_alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.to_string(), ElementId::new(target));
    }

    /// Registers a user-defined parameter attached to an existing holder.
    pub fn register_parameter(
        &mut self,
        id: &str,
        holder: &str,
        layer: Layer,
        bounds: Bounds,
    ) -> Result<(), AbstractionError> {
        if self.elements.contains_key(id) {
            return Err(AbstractionError::DuplicateElement(id.to_string()));
        }
        let holder_id = self
            .canonical(holder)
            .ok_or_else(|| AbstractionError::UnknownElement(holder.to_string()))?;
        self.add_primitive(id, EntityType::Parameter, layer);
        self.add_edge(holder_id.as_str(), Relation::HasAttribute, id);
        self.default_bounds.insert(ElementId::new(id), bounds);
        self.check_references()
    }

    /// Primitive holder of an element: the element `x` such that `x has_attribute id`.
    pub fn holder_of(&self, id: &ElementId) -> Option<&ElementId> {
        self.edges
            .iter()
            .find(|e| e.relation == Relation::HasAttribute && &e.dst == id)
            .map(|e| &e.src)
    }

    /// Entity type a parameter belongs to (the holder's entity type).
    pub fn holder_entity(&self, param: &ElementId) -> Option<EntityType> {
        let holder = self.holder_of(param)?;
        self.elements.get(holder).map(|e| e.element_ref().entity_type)
    }

    /// The primitive element that every member of a virtual element is.
    pub fn member_holder(&self, virt: &ElementId) -> Option<&ElementId> {
        self.edges
            .iter()
            .find(|e| e.relation == Relation::EachMemberIs && &e.src == virt)
            .map(|e| &e.dst)
    }

    /// Global virtual element spanning all entities of a type (`netlnk` for links).
    pub fn global_of(&self, entity: EntityType) -> Option<&VirtualElement> {
        self.elements.values().find_map(|e| match e {
            Element::Virtual(v) if v.scope == Scope::Global && v.member_entity_type == entity => {
                Some(v)
            }
            _ => None,
        })
    }

    /// Parameters `id` transitively depends on through `is_function_of`.
    pub fn function_inputs(&self, id: &ElementId) -> Vec<ElementId> {
        let mut out = Vec::new();
        let mut stack = vec![id.clone()];
        while let Some(cur) = stack.pop() {
            for e in &self.edges {
                if e.relation == Relation::IsFunctionOf && e.src == cur && !out.contains(&e.dst) {
                    out.push(e.dst.clone());
                    stack.push(e.dst.clone());
                }
            }
        }
        out
    }

    /// Resolves a dot-separated chain of attribute/member hops.
    ///
    /// A hop `a.b` succeeds when `a has_attribute b`, or when `a` is virtual,
    /// each member of `a` is some `m`, and `m has_attribute b`. Bracketed
    /// indices (`netses[1]`) are ignored here.
    pub fn read(&self, path: &str) -> Result<&Element, AbstractionError> {
        let unknown = || AbstractionError::UnknownElement(path.to_string());
        let mut segments = path.split('.').map(|s| s.split('[').next().unwrap_or(s).trim());
        let first = segments.next().ok_or_else(unknown)?;
        let mut cur = self.canonical(first).ok_or_else(unknown)?;
        for seg in segments {
            let next = self.canonical(seg).ok_or_else(unknown)?;
            if self.has_edge(cur.as_str(), Relation::HasAttribute, next.as_str()) {
                cur = next;
                continue;
            }
            match self.member_holder(&cur) {
                Some(m) if self.has_edge(m.as_str(), Relation::HasAttribute, next.as_str()) => {
                    cur = next;
                }
                _ => return Err(unknown()),
            }
        }
        self.elements.get(&cur).ok_or_else(unknown)
    }

    /// Every owner/member reference must resolve inside the schema.
    pub fn check_references(&self) -> Result<(), AbstractionError> {
        for e in &self.edges {
            for id in [&e.src, &e.dst] {
                if !self.elements.contains_key(id) {
                    return Err(AbstractionError::UnknownElement(id.to_string()));
                }
            }
            if e.relation == Relation::EachMemberIs
                && self.elements[&e.src].as_virtual().is_none()
            {
                return Err(AbstractionError::InvalidEdge(format!(
                    "each_member_is must originate at a virtual element: {} -> {}",
                    e.src, e.dst
                )));
            }
        }
        for el in self.elements.values() {
            if let Element::Virtual(v) = el {
                if let Some(o) = &v.owner {
                    if !self.elements.contains_key(o) {
                        return Err(AbstractionError::UnknownElement(o.to_string()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn elements_by_id(&self) -> &BTreeMap<ElementId, Element> {
        &self.elements
    }
}

/// The built-in schema every program is resolved against.
pub fn build_default_schema() -> NetworkSchema {
    use EntityType::*;
    use Relation::*;

    let mut s = NetworkSchema::empty();

    s.add_primitive(NODE, Node, Layer::None);
    s.add_primitive(LINK, Link, Layer::None);
    s.add_primitive(SESSION, Session, Layer::None);

    s.add_virtual("netnd", Node, None);
    s.add_virtual("netlnk", Link, None);
    s.add_virtual("netses", Session, None);

    s.add_virtual("nbrnd", Node, Some(NODE));
    s.add_virtual("lnkses", Session, Some(LINK));
    s.add_virtual("seslnk", Link, Some(SESSION));
    s.add_virtual("lnknd", Link, Some(NODE));

    s.add_primitive("lnkcap", Parameter, Layer::Physical);
    s.add_primitive("lnkpwr", Parameter, Layer::Physical);
    s.add_primitive("lnksinr", Parameter, Layer::Physical);
    s.add_primitive("sesrate", Parameter, Layer::Transport);
    s.add_primitive("maxpwr", Parameter, Layer::Physical);

    s.add_edge("netnd", EachMemberIs, NODE);
    s.add_edge("netlnk", EachMemberIs, LINK);
    s.add_edge("netses", EachMemberIs, SESSION);

    s.add_edge(NODE, HasAttribute, "maxpwr");
    s.add_edge(NODE, HasAttribute, "nbrnd");
    s.add_edge("nbrnd", EachMemberIs, NODE);
    s.add_edge(NODE, HasAttribute, "lnknd");
    s.add_edge("lnknd", EachMemberIs, LINK);

    s.add_edge(LINK, HasAttribute, "lnkcap");
    s.add_edge(LINK, HasAttribute, "lnkpwr");
    s.add_edge(LINK, HasAttribute, "lnksinr");
    s.add_edge(LINK, HasAttribute, "lnkses");
    s.add_edge("lnkses", EachMemberIs, SESSION);

    s.add_edge(SESSION, HasAttribute, "sesrate");
    s.add_edge(SESSION, HasAttribute, "seslnk");
    s.add_edge("seslnk", EachMemberIs, LINK);

    s.add_edge("lnksinr", IsFunctionOf, "lnkpwr");
    s.add_edge("lnkcap", IsFunctionOf, "lnksinr");

    // Spellings used by the original program listings.
    for (alias, target) in [
        ("ntnd", "netnd"),
        ("ntlk", "netlnk"),
        ("ntlnk", "netlnk"),
        ("ntses", "netses"),
        ("lkses", "lnkses"),
        ("lkpwr", "lnkpwr"),
        ("lkcap", "lnkcap"),
        ("lksinr", "lnksinr"),
        ("lknd", "lnknd"),
    ] {
        s.add_alias(alias, target);
    }

    // Transmit power is a gain in dB on the radio front-end.
    s.default_bounds.insert(ElementId::new("lnkpwr"), Bounds::new(0.0, 30.0));
    s.default_bounds.insert(ElementId::new("maxpwr"), Bounds::new(0.0, 30.0));
    s.default_bounds
        .insert(ElementId::new("sesrate"), Bounds::new(0.0, f64::INFINITY));

    debug_assert!(s.check_references().is_ok());
    s
}
