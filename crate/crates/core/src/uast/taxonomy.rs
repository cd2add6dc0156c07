//! Universal node taxonomy and the per-language kind tables that feed it.
//!
//! The 47 categories are a closed set with stable codes. Every grammar node
//! kind maps to exactly one category; kinds absent from the tables fall back
//! to a token class (for anonymous grammar symbols) or to `UNKNOWN`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Language;

macro_rules! categories {
    ($($code:literal => $variant:ident = $name:literal,)*) => {
        /// One of the 47 universal node categories.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum UniversalCategory {
            $($variant = $code,)*
        }

        impl UniversalCategory {
            /// Every category, ordered by code.
            pub const ALL: [UniversalCategory; 47] = [$(UniversalCategory::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(UniversalCategory::$variant => $name,)*
                }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $($name => Some(UniversalCategory::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

categories! {
    0 => Unknown = "UNKNOWN",
    1 => Module = "MODULE",
    2 => FunctionDeclaration = "FUNCTION_DECLARATION",
    3 => ClassDeclaration = "CLASS_DECLARATION",
    4 => MemoryOperation = "MEMORY_OPERATION",
    5 => EnumDeclaration = "ENUM_DECLARATION",
    6 => Preprocessor = "PREPROCESSOR",
    7 => NamespaceDeclaration = "NAMESPACE_DECLARATION",
    8 => VariableDeclaration = "VARIABLE_DECLARATION",
    9 => VariableAssignment = "VARIABLE_ASSIGNMENT",
    10 => FieldDeclaration = "FIELD_DECLARATION",
    11 => Parameter = "PARAMETER",
    12 => ParameterList = "PARAMETER_LIST",
    13 => TypeReference = "TYPE_REFERENCE",
    14 => TypeParameter = "TYPE_PARAMETER",
    15 => Block = "BLOCK",
    16 => ExpressionStatement = "EXPRESSION_STATEMENT",
    17 => ReturnStatement = "RETURN_STATEMENT",
    18 => ControlFlow = "CONTROL_FLOW",
    19 => Loop = "LOOP",
    20 => JumpStatement = "JUMP_STATEMENT",
    21 => ExceptionHandling = "EXCEPTION_HANDLING",
    22 => ThrowStatement = "THROW_STATEMENT",
    23 => ResourceManagement = "RESOURCE_MANAGEMENT",
    24 => Call = "CALL",
    25 => ArgumentList = "ARGUMENT_LIST",
    26 => MemberAccess = "MEMBER_ACCESS",
    27 => Subscript = "SUBSCRIPT",
    28 => BinaryOperation = "BINARY_OPERATION",
    29 => UnaryOperation = "UNARY_OPERATION",
    30 => Comparison = "COMPARISON",
    31 => LogicalOperation = "LOGICAL_OPERATION",
    32 => StringLiteral = "STRING_LITERAL",
    33 => NumericLiteral = "NUMERIC_LITERAL",
    34 => ConstantLiteral = "CONSTANT_LITERAL",
    35 => ParenthesizedExpression = "PARENTHESIZED_EXPRESSION",
    36 => CollectionLiteral = "COLLECTION_LITERAL",
    37 => Identifier = "IDENTIFIER",
    38 => Import = "IMPORT",
    39 => Lambda = "LAMBDA",
    40 => ObjectCreation = "OBJECT_CREATION",
    41 => TypeCast = "TYPE_CAST",
    42 => Annotation = "ANNOTATION",
    43 => Comment = "COMMENT",
    44 => Keyword = "KEYWORD",
    45 => OperatorToken = "OPERATOR_TOKEN",
    46 => Punctuation = "PUNCTUATION",
}

impl UniversalCategory {
    pub const COUNT: usize = 47;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for UniversalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UniversalCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_name(s).ok_or_else(|| format!("unknown universal category `{s}`"))
    }
}

impl Serialize for UniversalCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for UniversalCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Self::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown category `{name}`")))
    }
}

use UniversalCategory as C;

const PYTHON_KINDS: &[(&str, UniversalCategory)] = &[
    ("module", C::Module),
    ("function_definition", C::FunctionDeclaration),
    ("class_definition", C::ClassDeclaration),
    ("decorated_definition", C::Annotation),
    ("decorator", C::Annotation),
    ("assignment", C::VariableAssignment),
    ("augmented_assignment", C::VariableAssignment),
    ("named_expression", C::VariableAssignment),
    ("global_statement", C::VariableDeclaration),
    ("nonlocal_statement", C::VariableDeclaration),
    ("type_alias_statement", C::TypeReference),
    ("parameters", C::ParameterList),
    ("lambda_parameters", C::ParameterList),
    ("default_parameter", C::Parameter),
    ("typed_parameter", C::Parameter),
    ("typed_default_parameter", C::Parameter),
    ("list_splat_pattern", C::Parameter),
    ("dictionary_splat_pattern", C::Parameter),
    ("keyword_separator", C::Parameter),
    ("positional_separator", C::Parameter),
    ("type", C::TypeReference),
    ("generic_type", C::TypeReference),
    ("union_type", C::TypeReference),
    ("constrained_type", C::TypeReference),
    ("member_type", C::TypeReference),
    ("splat_type", C::TypeReference),
    ("type_parameter", C::TypeParameter),
    ("block", C::Block),
    ("expression_statement", C::ExpressionStatement),
    ("pass_statement", C::ExpressionStatement),
    ("delete_statement", C::ExpressionStatement),
    ("print_statement", C::ExpressionStatement),
    ("exec_statement", C::ExpressionStatement),
    ("return_statement", C::ReturnStatement),
    ("yield", C::ReturnStatement),
    ("if_statement", C::ControlFlow),
    ("elif_clause", C::ControlFlow),
    ("else_clause", C::ControlFlow),
    ("conditional_expression", C::ControlFlow),
    ("match_statement", C::ControlFlow),
    ("case_clause", C::ControlFlow),
    ("case_pattern", C::ControlFlow),
    ("assert_statement", C::ControlFlow),
    ("if_clause", C::ControlFlow),
    ("for_statement", C::Loop),
    ("while_statement", C::Loop),
    ("for_in_clause", C::Loop),
    ("break_statement", C::JumpStatement),
    ("continue_statement", C::JumpStatement),
    ("try_statement", C::ExceptionHandling),
    ("except_clause", C::ExceptionHandling),
    ("finally_clause", C::ExceptionHandling),
    ("raise_statement", C::ThrowStatement),
    ("with_statement", C::ResourceManagement),
    ("with_clause", C::ResourceManagement),
    ("with_item", C::ResourceManagement),
    ("call", C::Call),
    ("argument_list", C::ArgumentList),
    ("keyword_argument", C::ArgumentList),
    ("list_splat", C::ArgumentList),
    ("dictionary_splat", C::ArgumentList),
    ("attribute", C::MemberAccess),
    ("subscript", C::Subscript),
    ("slice", C::Subscript),
    ("binary_operator", C::BinaryOperation),
    ("unary_operator", C::UnaryOperation),
    ("not_operator", C::UnaryOperation),
    ("await", C::UnaryOperation),
    ("comparison_operator", C::Comparison),
    ("boolean_operator", C::LogicalOperation),
    ("string", C::StringLiteral),
    ("concatenated_string", C::StringLiteral),
    ("string_content", C::StringLiteral),
    ("string_start", C::StringLiteral),
    ("string_end", C::StringLiteral),
    ("escape_sequence", C::StringLiteral),
    ("escape_interpolation", C::StringLiteral),
    ("interpolation", C::StringLiteral),
    ("format_specifier", C::StringLiteral),
    ("format_expression", C::StringLiteral),
    ("type_conversion", C::StringLiteral),
    ("integer", C::NumericLiteral),
    ("float", C::NumericLiteral),
    ("true", C::ConstantLiteral),
    ("false", C::ConstantLiteral),
    ("none", C::ConstantLiteral),
    ("ellipsis", C::ConstantLiteral),
    ("parenthesized_expression", C::ParenthesizedExpression),
    ("list", C::CollectionLiteral),
    ("dictionary", C::CollectionLiteral),
    ("set", C::CollectionLiteral),
    ("tuple", C::CollectionLiteral),
    ("pair", C::CollectionLiteral),
    ("expression_list", C::CollectionLiteral),
    ("pattern_list", C::CollectionLiteral),
    ("tuple_pattern", C::CollectionLiteral),
    ("list_pattern", C::CollectionLiteral),
    ("list_comprehension", C::CollectionLiteral),
    ("dictionary_comprehension", C::CollectionLiteral),
    ("set_comprehension", C::CollectionLiteral),
    ("generator_expression", C::CollectionLiteral),
    ("identifier", C::Identifier),
    ("dotted_name", C::Identifier),
    ("import_statement", C::Import),
    ("import_from_statement", C::Import),
    ("future_import_statement", C::Import),
    ("aliased_import", C::Import),
    ("wildcard_import", C::Import),
    ("relative_import", C::Import),
    ("import_prefix", C::Import),
    ("lambda", C::Lambda),
    ("comment", C::Comment),
    ("line_continuation", C::Punctuation),
];

const JAVA_KINDS: &[(&str, UniversalCategory)] = &[
    ("program", C::Module),
    ("method_declaration", C::FunctionDeclaration),
    ("constructor_declaration", C::FunctionDeclaration),
    ("compact_constructor_declaration", C::FunctionDeclaration),
    ("class_declaration", C::ClassDeclaration),
    ("interface_declaration", C::ClassDeclaration),
    ("record_declaration", C::ClassDeclaration),
    ("annotation_type_declaration", C::ClassDeclaration),
    ("superclass", C::ClassDeclaration),
    ("super_interfaces", C::ClassDeclaration),
    ("extends_interfaces", C::ClassDeclaration),
    ("enum_declaration", C::EnumDeclaration),
    ("enum_body", C::EnumDeclaration),
    ("enum_constant", C::EnumDeclaration),
    ("enum_body_declarations", C::EnumDeclaration),
    ("package_declaration", C::NamespaceDeclaration),
    ("module_declaration", C::NamespaceDeclaration),
    ("module_body", C::NamespaceDeclaration),
    ("local_variable_declaration", C::VariableDeclaration),
    ("variable_declarator", C::VariableDeclaration),
    ("assignment_expression", C::VariableAssignment),
    ("field_declaration", C::FieldDeclaration),
    ("constant_declaration", C::FieldDeclaration),
    ("formal_parameter", C::Parameter),
    ("spread_parameter", C::Parameter),
    ("receiver_parameter", C::Parameter),
    ("catch_formal_parameter", C::Parameter),
    ("formal_parameters", C::ParameterList),
    ("inferred_parameters", C::ParameterList),
    ("type_identifier", C::TypeReference),
    ("scoped_type_identifier", C::TypeReference),
    ("generic_type", C::TypeReference),
    ("array_type", C::TypeReference),
    ("integral_type", C::TypeReference),
    ("floating_point_type", C::TypeReference),
    ("boolean_type", C::TypeReference),
    ("void_type", C::TypeReference),
    ("type_arguments", C::TypeReference),
    ("dimensions", C::TypeReference),
    ("annotated_type", C::TypeReference),
    ("catch_type", C::TypeReference),
    ("type_list", C::TypeReference),
    ("type_parameter", C::TypeParameter),
    ("type_parameters", C::TypeParameter),
    ("type_bound", C::TypeParameter),
    ("wildcard", C::TypeParameter),
    ("block", C::Block),
    ("class_body", C::Block),
    ("interface_body", C::Block),
    ("constructor_body", C::Block),
    ("switch_block", C::Block),
    ("static_initializer", C::Block),
    ("annotation_type_body", C::Block),
    ("expression_statement", C::ExpressionStatement),
    ("return_statement", C::ReturnStatement),
    ("yield_statement", C::ReturnStatement),
    ("if_statement", C::ControlFlow),
    ("switch_expression", C::ControlFlow),
    ("switch_block_statement_group", C::ControlFlow),
    ("switch_label", C::ControlFlow),
    ("switch_rule", C::ControlFlow),
    ("ternary_expression", C::ControlFlow),
    ("assert_statement", C::ControlFlow),
    ("guard", C::ControlFlow),
    ("for_statement", C::Loop),
    ("enhanced_for_statement", C::Loop),
    ("while_statement", C::Loop),
    ("do_statement", C::Loop),
    ("break_statement", C::JumpStatement),
    ("continue_statement", C::JumpStatement),
    ("labeled_statement", C::JumpStatement),
    ("try_statement", C::ExceptionHandling),
    ("catch_clause", C::ExceptionHandling),
    ("finally_clause", C::ExceptionHandling),
    ("throws", C::ExceptionHandling),
    ("throw_statement", C::ThrowStatement),
    ("try_with_resources_statement", C::ResourceManagement),
    ("resource_specification", C::ResourceManagement),
    ("resource", C::ResourceManagement),
    ("synchronized_statement", C::ResourceManagement),
    ("method_invocation", C::Call),
    ("explicit_constructor_invocation", C::Call),
    ("argument_list", C::ArgumentList),
    ("field_access", C::MemberAccess),
    ("scoped_identifier", C::MemberAccess),
    ("method_reference", C::MemberAccess),
    ("array_access", C::Subscript),
    ("binary_expression", C::BinaryOperation),
    ("unary_expression", C::UnaryOperation),
    ("update_expression", C::UnaryOperation),
    ("instanceof_expression", C::Comparison),
    ("string_literal", C::StringLiteral),
    ("string_fragment", C::StringLiteral),
    ("multiline_string_fragment", C::StringLiteral),
    ("string_interpolation", C::StringLiteral),
    ("template_expression", C::StringLiteral),
    ("escape_sequence", C::StringLiteral),
    ("character_literal", C::StringLiteral),
    ("decimal_integer_literal", C::NumericLiteral),
    ("hex_integer_literal", C::NumericLiteral),
    ("octal_integer_literal", C::NumericLiteral),
    ("binary_integer_literal", C::NumericLiteral),
    ("decimal_floating_point_literal", C::NumericLiteral),
    ("hex_floating_point_literal", C::NumericLiteral),
    ("true", C::ConstantLiteral),
    ("false", C::ConstantLiteral),
    ("null_literal", C::ConstantLiteral),
    ("parenthesized_expression", C::ParenthesizedExpression),
    ("array_initializer", C::CollectionLiteral),
    ("element_value_array_initializer", C::CollectionLiteral),
    ("identifier", C::Identifier),
    ("this", C::Identifier),
    ("super", C::Identifier),
    ("import_declaration", C::Import),
    ("asterisk", C::Import),
    ("lambda_expression", C::Lambda),
    ("object_creation_expression", C::ObjectCreation),
    ("array_creation_expression", C::ObjectCreation),
    ("class_literal", C::ObjectCreation),
    ("cast_expression", C::TypeCast),
    ("annotation", C::Annotation),
    ("marker_annotation", C::Annotation),
    ("annotation_argument_list", C::Annotation),
    ("element_value_pair", C::Annotation),
    ("modifiers", C::Keyword),
    ("line_comment", C::Comment),
    ("block_comment", C::Comment),
];

const CPP_KINDS: &[(&str, UniversalCategory)] = &[
    ("translation_unit", C::Module),
    ("function_definition", C::FunctionDeclaration),
    ("function_declarator", C::ParameterList),
    ("class_specifier", C::ClassDeclaration),
    ("struct_specifier", C::ClassDeclaration),
    ("union_specifier", C::ClassDeclaration),
    ("base_class_clause", C::ClassDeclaration),
    ("enum_specifier", C::EnumDeclaration),
    ("enumerator_list", C::EnumDeclaration),
    ("enumerator", C::EnumDeclaration),
    ("namespace_definition", C::NamespaceDeclaration),
    ("namespace_alias_definition", C::NamespaceDeclaration),
    ("linkage_specification", C::NamespaceDeclaration),
    ("nested_namespace_specifier", C::NamespaceDeclaration),
    ("declaration", C::VariableDeclaration),
    ("init_declarator", C::VariableDeclaration),
    ("structured_binding_declarator", C::VariableDeclaration),
    ("assignment_expression", C::VariableAssignment),
    ("field_initializer_list", C::VariableAssignment),
    ("field_initializer", C::VariableAssignment),
    ("field_declaration", C::FieldDeclaration),
    ("bitfield_clause", C::FieldDeclaration),
    ("parameter_declaration", C::Parameter),
    ("optional_parameter_declaration", C::Parameter),
    ("variadic_parameter_declaration", C::Parameter),
    ("parameter_list", C::ParameterList),
    ("primitive_type", C::TypeReference),
    ("type_identifier", C::TypeReference),
    ("sized_type_specifier", C::TypeReference),
    ("template_type", C::TypeReference),
    ("type_descriptor", C::TypeReference),
    ("template_argument_list", C::TypeReference),
    ("type_qualifier", C::TypeReference),
    ("auto", C::TypeReference),
    ("placeholder_type_specifier", C::TypeReference),
    ("decltype", C::TypeReference),
    ("type_definition", C::TypeReference),
    ("alias_declaration", C::TypeReference),
    ("dependent_type", C::TypeReference),
    ("trailing_return_type", C::TypeReference),
    ("template_declaration", C::TypeParameter),
    ("template_parameter_list", C::TypeParameter),
    ("type_parameter_declaration", C::TypeParameter),
    ("optional_type_parameter_declaration", C::TypeParameter),
    ("variadic_type_parameter_declaration", C::TypeParameter),
    ("template_instantiation", C::TypeParameter),
    ("compound_statement", C::Block),
    ("field_declaration_list", C::Block),
    ("declaration_list", C::Block),
    ("expression_statement", C::ExpressionStatement),
    ("return_statement", C::ReturnStatement),
    ("co_return_statement", C::ReturnStatement),
    ("co_yield_statement", C::ReturnStatement),
    ("if_statement", C::ControlFlow),
    ("else_clause", C::ControlFlow),
    ("switch_statement", C::ControlFlow),
    ("case_statement", C::ControlFlow),
    ("conditional_expression", C::ControlFlow),
    ("condition_clause", C::ControlFlow),
    ("static_assert_declaration", C::ControlFlow),
    ("for_statement", C::Loop),
    ("for_range_loop", C::Loop),
    ("while_statement", C::Loop),
    ("do_statement", C::Loop),
    ("break_statement", C::JumpStatement),
    ("continue_statement", C::JumpStatement),
    ("goto_statement", C::JumpStatement),
    ("labeled_statement", C::JumpStatement),
    ("try_statement", C::ExceptionHandling),
    ("catch_clause", C::ExceptionHandling),
    ("noexcept", C::ExceptionHandling),
    ("throw_specifier", C::ExceptionHandling),
    ("throw_statement", C::ThrowStatement),
    ("call_expression", C::Call),
    ("argument_list", C::ArgumentList),
    ("field_expression", C::MemberAccess),
    ("qualified_identifier", C::MemberAccess),
    ("subscript_expression", C::Subscript),
    ("subscript_argument_list", C::Subscript),
    ("binary_expression", C::BinaryOperation),
    ("comma_expression", C::BinaryOperation),
    ("fold_expression", C::BinaryOperation),
    ("unary_expression", C::UnaryOperation),
    ("update_expression", C::UnaryOperation),
    ("co_await_expression", C::UnaryOperation),
    ("pointer_expression", C::MemoryOperation),
    ("pointer_declarator", C::MemoryOperation),
    ("reference_declarator", C::MemoryOperation),
    ("array_declarator", C::MemoryOperation),
    ("abstract_pointer_declarator", C::MemoryOperation),
    ("abstract_reference_declarator", C::MemoryOperation),
    ("abstract_array_declarator", C::MemoryOperation),
    ("delete_expression", C::MemoryOperation),
    ("sizeof_expression", C::MemoryOperation),
    ("alignof_expression", C::MemoryOperation),
    ("offsetof_expression", C::MemoryOperation),
    ("new_declarator", C::MemoryOperation),
    ("string_literal", C::StringLiteral),
    ("raw_string_literal", C::StringLiteral),
    ("concatenated_string", C::StringLiteral),
    ("char_literal", C::StringLiteral),
    ("string_content", C::StringLiteral),
    ("raw_string_content", C::StringLiteral),
    ("raw_string_delimiter", C::StringLiteral),
    ("escape_sequence", C::StringLiteral),
    ("system_lib_string", C::StringLiteral),
    ("character", C::StringLiteral),
    ("user_defined_literal", C::NumericLiteral),
    ("number_literal", C::NumericLiteral),
    ("literal_suffix", C::NumericLiteral),
    ("true", C::ConstantLiteral),
    ("false", C::ConstantLiteral),
    ("null", C::ConstantLiteral),
    ("parenthesized_expression", C::ParenthesizedExpression),
    ("initializer_list", C::CollectionLiteral),
    ("initializer_pair", C::CollectionLiteral),
    ("compound_literal_expression", C::CollectionLiteral),
    ("identifier", C::Identifier),
    ("field_identifier", C::Identifier),
    ("namespace_identifier", C::Identifier),
    ("statement_identifier", C::Identifier),
    ("this", C::Identifier),
    ("destructor_name", C::Identifier),
    ("operator_name", C::Identifier),
    ("template_function", C::Identifier),
    ("template_method", C::Identifier),
    ("dependent_name", C::Identifier),
    ("preproc_include", C::Import),
    ("using_declaration", C::Import),
    ("preproc_def", C::Preprocessor),
    ("preproc_function_def", C::Preprocessor),
    ("preproc_call", C::Preprocessor),
    ("preproc_if", C::Preprocessor),
    ("preproc_ifdef", C::Preprocessor),
    ("preproc_else", C::Preprocessor),
    ("preproc_elif", C::Preprocessor),
    ("preproc_elifdef", C::Preprocessor),
    ("preproc_arg", C::Preprocessor),
    ("preproc_directive", C::Preprocessor),
    ("preproc_params", C::Preprocessor),
    ("preproc_defined", C::Preprocessor),
    ("lambda_expression", C::Lambda),
    ("lambda_capture_specifier", C::Lambda),
    ("lambda_default_capture", C::Lambda),
    ("new_expression", C::ObjectCreation),
    ("cast_expression", C::TypeCast),
    ("attribute", C::Annotation),
    ("attribute_specifier", C::Annotation),
    ("attribute_declaration", C::Annotation),
    ("attributed_statement", C::Annotation),
    ("storage_class_specifier", C::Keyword),
    ("virtual_specifier", C::Keyword),
    ("access_specifier", C::Keyword),
    ("explicit_function_specifier", C::Keyword),
    ("comment", C::Comment),
];

fn kind_table(language: Language) -> &'static [(&'static str, UniversalCategory)] {
    match language {
        Language::Python => PYTHON_KINDS,
        Language::Java => JAVA_KINDS,
        Language::Cpp => CPP_KINDS,
    }
}

/// Looks a named grammar kind up in the language's table.
pub(crate) fn lookup_kind(native_type: &str, language: Language) -> Option<UniversalCategory> {
    kind_table(language)
        .iter()
        .find(|(kind, _)| *kind == native_type)
        .map(|(_, cat)| *cat)
}

const PUNCTUATION: &[&str] = &[
    "(", ")", "[", "]", "{", "}", ",", ";", ":", ".", "::", "...", "@", "->", "\"", "'", "`", "#",
];

/// Token class for an anonymous grammar symbol (keywords, operators, punctuation).
pub(crate) fn token_class(kind: &str) -> UniversalCategory {
    if PUNCTUATION.contains(&kind) {
        C::Punctuation
    } else if kind
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '#')
    {
        C::Keyword
    } else {
        C::OperatorToken
    }
}

/// Number of entries in the language's kind table.
pub fn mapped_kind_count(language: Language) -> usize {
    kind_table(language).len()
}

const RAII_TYPES: &[&str] = &[
    "lock_guard",
    "unique_lock",
    "scoped_lock",
    "shared_lock",
    "unique_ptr",
    "shared_ptr",
    "ifstream",
    "ofstream",
    "fstream",
];

/// Cross-language role for a node, if any. `type_text` is the source text of
/// the node's type child (only consulted for C++ declarations).
pub(crate) fn semantic_role(
    native_type: &str,
    language: Language,
    type_text: Option<&str>,
) -> Option<&'static str> {
    match (language, native_type) {
        (Language::Python, "with_statement") => Some("SCOPED_RESOURCE"),
        (Language::Java, "try_with_resources_statement") => Some("SCOPED_RESOURCE"),
        (Language::Cpp, "declaration") => type_text
            .filter(|t| RAII_TYPES.iter().any(|raii| t.contains(raii)))
            .map(|_| "SCOPED_RESOURCE"),
        (_, "try_statement") => Some("EXCEPTION_SCOPE"),
        (Language::Python, "import_statement" | "import_from_statement")
        | (Language::Java, "import_declaration")
        | (Language::Cpp, "preproc_include" | "using_declaration") => Some("MODULE_IMPORT"),
        (Language::Python, "lambda") | (Language::Java | Language::Cpp, "lambda_expression") => {
            Some("ANONYMOUS_FUNCTION")
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn taxonomy_is_a_closed_bijection() {
        assert_eq!(UniversalCategory::ALL.len(), 47);
        let names: HashSet<_> = UniversalCategory::ALL.iter().map(|c| c.name()).collect();
        assert_eq!(names.len(), 47);
        for (i, cat) in UniversalCategory::ALL.iter().enumerate() {
            assert_eq!(cat.code() as usize, i);
            assert_eq!(UniversalCategory::from_code(i as u8), Some(*cat));
            assert_eq!(UniversalCategory::from_name(cat.name()), Some(*cat));
        }
        assert_eq!(UniversalCategory::from_code(47), None);
        for required in [
            "FUNCTION_DECLARATION",
            "VARIABLE_ASSIGNMENT",
            "CONTROL_FLOW",
            "UNKNOWN",
        ] {
            assert!(names.contains(required));
        }
    }

    #[test]
    fn tables_have_no_duplicate_kinds() {
        for lang in Language::ALL {
            let table = kind_table(lang);
            let kinds: HashSet<_> = table.iter().map(|(k, _)| *k).collect();
            assert_eq!(kinds.len(), table.len(), "{lang}");
        }
        let total: usize = Language::ALL.iter().map(|l| mapped_kind_count(*l)).sum();
        assert!(total > 200);
    }

    #[test]
    fn token_classes() {
        assert_eq!(token_class("("), C::Punctuation);
        assert_eq!(token_class("def"), C::Keyword);
        assert_eq!(token_class("+="), C::OperatorToken);
    }
}
